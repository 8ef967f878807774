/**
 * Approval queue view-model.
 *
 * Projects the server's approval list into rows the queue screen renders
 * directly: pending-first ordering, a live wait clock for undecided entries,
 * and a conflict-aware decide action (a second instructor may have decided
 * the same request first — that 409 becomes a banner, not a crash).
 */

import { ApiError, ConsoleClient } from "./client.js";
import type { Decision, PendingApproval } from "./types.js";

export interface ApprovalRow {
  approvalId: string;
  sessionId: string;
  requestedLevel: string;
  justification: string;
  /** Seconds waited so far (pending) or until the decision (decided). */
  waitedSeconds: number;
  decision: Decision | null;
}

export interface DecisionOutcome {
  ok: boolean;
  /** Set when another instructor already decided this request. */
  conflict?: string;
}

export function toApprovalRow(
  req: PendingApproval,
  nowSeconds: number,
): ApprovalRow {
  const waited =
    req.decision !== null && req.wait_ms !== null
      ? req.wait_ms / 1000
      : Math.max(0, nowSeconds - req.enqueued_at);
  return {
    approvalId: req.approval_id,
    sessionId: req.session_id,
    requestedLevel: req.requested_level,
    justification: req.justification,
    waitedSeconds: waited,
    decision: req.decision,
  };
}

/** Pending requests first (oldest on top), then decided ones (newest first). */
export function orderQueue(requests: PendingApproval[]): PendingApproval[] {
  const pending = requests
    .filter((r) => r.decision === null)
    .sort((a, b) => a.enqueued_at - b.enqueued_at);
  const decided = requests
    .filter((r) => r.decision !== null)
    .sort((a, b) => (b.decided_at ?? 0) - (a.decided_at ?? 0));
  return [...pending, ...decided];
}

export class ApprovalQueue {
  constructor(private readonly client: ConsoleClient) {}

  async rows(includeDecided = false): Promise<ApprovalRow[]> {
    const requests = await this.client.listApprovals(includeDecided);
    const now = Date.now() / 1000;
    return orderQueue(requests).map((r) => toApprovalRow(r, now));
  }

  async decide(
    approvalId: string,
    decision: Decision,
  ): Promise<DecisionOutcome> {
    try {
      await this.client.decideApproval(approvalId, decision);
      return { ok: true };
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        return { ok: false, conflict: err.detail };
      }
      throw err;
    }
  }
}

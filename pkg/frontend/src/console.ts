/**
 * Console orchestrator: one polling loop that refreshes the approval queue,
 * budget bars, policy panel, and audit feed together.
 *
 * The transport is plain HTTP polling (default every 2 s); there is no
 * push channel and no client-side state the server does not already hold.
 */

import { ApprovalQueue, type ApprovalRow } from "./approvals.js";
import {
  orderBySpend,
  toBudgetBar,
  toL3Usage,
  type BudgetBar,
  type L3Usage,
} from "./budgets.js";
import { ConsoleClient } from "./client.js";
import { AuditFeed, type FeedRow } from "./feed.js";
import { PolicyEditor } from "./policy.js";
import type { PolicyStatus } from "./types.js";

export interface ConsoleSnapshot {
  policy: PolicyStatus;
  approvals: ApprovalRow[];
  budgets: BudgetBar[];
  l3Usage: L3Usage[];
  feed: FeedRow[];
  refreshedAt: number;
}

export interface ConsoleOptions {
  pollIntervalMs?: number;
  includeDecidedApprovals?: boolean;
}

export class InstructorConsole {
  readonly approvals: ApprovalQueue;
  readonly policyEditor: PolicyEditor;
  readonly feed: AuditFeed;
  private readonly pollIntervalMs: number;
  private readonly includeDecided: boolean;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    readonly client: ConsoleClient,
    options: ConsoleOptions = {},
  ) {
    this.approvals = new ApprovalQueue(client);
    this.policyEditor = new PolicyEditor(client);
    this.feed = new AuditFeed(client);
    this.pollIntervalMs = options.pollIntervalMs ?? 2000;
    this.includeDecided = options.includeDecidedApprovals ?? false;
  }

  /** One full refresh of every panel. */
  async refresh(): Promise<ConsoleSnapshot> {
    const [policy, approvals, budgetStatuses] = await Promise.all([
      this.client.getPolicy(),
      this.approvals.rows(this.includeDecided),
      this.client.budgets(),
    ]);
    await this.feed.poll();
    const ordered = orderBySpend(budgetStatuses);
    return {
      policy,
      approvals,
      budgets: ordered.map(toBudgetBar),
      l3Usage: ordered.map((b) => toL3Usage(b, policy.l3_max)),
      feed: this.feed.rows(),
      refreshedAt: Date.now(),
    };
  }

  start(onSnapshot: (snapshot: ConsoleSnapshot) => void): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => {
      this.refresh().then(onSnapshot, () => {
        // transient poll failure: keep the loop alive, next tick retries
      });
    }, this.pollIntervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

export { ApiError, ConsoleClient } from "./client.js";
export * from "./approvals.js";
export * from "./budgets.js";
export * from "./feed.js";
export * from "./policy.js";
export * from "./types.js";

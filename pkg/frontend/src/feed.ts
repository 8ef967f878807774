/**
 * Turn-level audit feed.
 *
 * The gateway serves telemetry as an append-only paginated list; the feed
 * keeps a byte offset (event count) as its cursor and fetches only new
 * events on each poll. Rows surface the audit trail an instructor needs:
 * why each turn routed where it did, which canonical intents matched (with
 * scores), what it cost, and whether the reply guardrail passed.
 */

import { ConsoleClient } from "./client.js";
import type { TelemetryEvent } from "./types.js";

export interface FeedRow {
  traceId: string;
  sessionId: string;
  turnIndex: number;
  policy: string;
  hintRequested: string;
  hintGranted: string;
  model: string;
  tier: string;
  routeWhy: string;
  /** "id (0.93)" entries, empty when the turn matched nothing. */
  canonicalMatches: string[];
  costLabel: string;
  guardrail: string;
  teacherBoost: boolean;
  approvalId: string | null;
}

export function toFeedRow(event: TelemetryEvent): FeedRow {
  const matches = event.canonical_ids.map((id, i) => {
    const score = event.canonical_scores[i];
    return score !== undefined ? `${id} (${score.toFixed(2)})` : id;
  });
  return {
    traceId: event.trace_id,
    sessionId: event.session_id,
    turnIndex: event.turn_index,
    policy: event.policy,
    hintRequested: event.hint_req,
    hintGranted: event.hint_granted,
    model: event.model,
    tier: event.tier,
    routeWhy: event.route_why,
    canonicalMatches: matches,
    costLabel: `$${(event.est_cost_micro / 1_000_000).toFixed(4)}`,
    guardrail: event.guardrail_result,
    teacherBoost: event.teacher_boost,
    approvalId: event.approval_id,
  };
}

/** Stable per-session ordering: session id, then turn index. */
export function orderFeed(events: TelemetryEvent[]): TelemetryEvent[] {
  return [...events].sort(
    (a, b) =>
      a.session_id.localeCompare(b.session_id) || a.turn_index - b.turn_index,
  );
}

export class AuditFeed {
  private cursor = 0;
  private readonly events: TelemetryEvent[] = [];

  constructor(
    private readonly client: ConsoleClient,
    private readonly pageSize = 100,
    private readonly sessionId?: string,
  ) {}

  get seen(): number {
    return this.cursor;
  }

  /** Fetch everything past the cursor; returns only the new events. */
  async poll(): Promise<TelemetryEvent[]> {
    const fresh: TelemetryEvent[] = [];
    for (;;) {
      const page = await this.client.telemetry(
        this.cursor,
        this.pageSize,
        this.sessionId,
      );
      fresh.push(...page.events);
      this.cursor += page.events.length;
      if (this.cursor >= page.total || page.events.length === 0) break;
    }
    this.events.push(...fresh);
    return fresh;
  }

  rows(): FeedRow[] {
    return orderFeed(this.events).map(toFeedRow);
  }
}

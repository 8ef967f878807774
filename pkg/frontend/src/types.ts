/**
 * Server payload shapes, mirrored field-for-field from the routing service
 * and gateway admin endpoints. The console never derives numbers of its own:
 * every displayed value maps onto one of these fields.
 */

export type PolicyMode = "P0" | "P1" | "P2";
export type HintLevel = "L0" | "L1" | "L2" | "L3";
export type Decision = "approved" | "denied";

export interface PendingApproval {
  approval_id: string;
  session_id: string;
  requested_level: HintLevel;
  justification: string;
  enqueued_at: number;
  decision: Decision | null;
  decided_at: number | null;
  wait_ms: number | null;
}

export interface BudgetStatus {
  session_id: string;
  lab_id: string;
  total_budget_micro: number;
  spent_micro: number;
  l3_granted_count: number;
}

export interface PolicyStatus {
  mode: PolicyMode;
  total_budget_micro: number;
  l3_max: number;
  approvals_enabled: boolean;
  overlay_mode: string;
  default_overlay_id: string | null;
  policy_hash: string;
}

export interface RoutePlanResponse {
  model_id: string;
  tier: "local" | "premium";
  granted_hint: HintLevel;
  overlay_id: string | null;
  overlay_mode: string;
  est_cost_micro: number;
  canonical_ids: string[];
  canonical_scores: number[];
  canonical_reason: string;
  route_why: string;
  fallback: boolean;
  requires_approval: boolean;
  approval_id: string | null;
  wait_ms: number | null;
  teacher_boost: boolean;
  plan_ms: number;
}

/** One telemetry event as served by the gateway's paginated feed. */
export interface TelemetryEvent {
  session_id: string;
  lab_id: string;
  policy: PolicyMode;
  step_id: string;
  hint_req: HintLevel;
  hint_granted: HintLevel;
  model: string;
  tier: "local" | "premium";
  overlay_fingerprint: string;
  canonical_ids: string[];
  canonical_scores: number[];
  canonical_reason: string;
  tokens: { prompt: number; completion: number };
  est_cost_micro: number;
  teacher_boost: boolean;
  approval_id: string | null;
  wait_ms: number | null;
  integrity_flag: boolean;
  turn_index: number;
  fallback: boolean;
  route_why: string;
  guardrail_result: "pass" | "fail" | "none";
  trace_id: string;
  [extra: string]: unknown;
}

export interface TelemetryPage {
  total: number;
  offset: number;
  events: TelemetryEvent[];
}

export interface ActionResponse {
  status: "ok";
  action_id: string | null;
}

/**
 * Budget panel projections: per-session spend bars and premium-hint usage.
 *
 * Amounts arrive from the server as integer micro-dollars and are only
 * formatted here — the console never recomputes costs.
 */

import type { BudgetStatus } from "./types.js";

export interface BudgetBar {
  sessionId: string;
  labId: string;
  spentLabel: string;
  totalLabel: string;
  /** 0..1 fill fraction, clamped for display. */
  fraction: number;
  exhausted: boolean;
}

export function formatMicroDollars(micro: number): string {
  return `$${(micro / 1_000_000).toFixed(4)}`;
}

export function toBudgetBar(status: BudgetStatus): BudgetBar {
  const fraction =
    status.total_budget_micro > 0
      ? Math.min(1, status.spent_micro / status.total_budget_micro)
      : 0;
  return {
    sessionId: status.session_id,
    labId: status.lab_id,
    spentLabel: formatMicroDollars(status.spent_micro),
    totalLabel: formatMicroDollars(status.total_budget_micro),
    fraction,
    exhausted: status.spent_micro >= status.total_budget_micro,
  };
}

export interface L3Usage {
  sessionId: string;
  used: number;
  cap: number;
  atCap: boolean;
}

export function toL3Usage(status: BudgetStatus, l3Max: number): L3Usage {
  return {
    sessionId: status.session_id,
    used: status.l3_granted_count,
    cap: l3Max,
    atCap: status.l3_granted_count >= l3Max,
  };
}

/** Highest-spend sessions first, ties broken by session id for stability. */
export function orderBySpend(statuses: BudgetStatus[]): BudgetStatus[] {
  return [...statuses].sort(
    (a, b) =>
      b.spent_micro - a.spent_micro ||
      a.session_id.localeCompare(b.session_id),
  );
}

/**
 * Policy editor form: validation and submission.
 *
 * Validation happens before any network call — an invalid form never sends a
 * request. The server re-validates everything; this layer only exists so the
 * instructor gets an immediate field-level message instead of a 422.
 */

import { ConsoleClient } from "./client.js";
import type { ActionResponse } from "./types.js";

const MODES = new Set(["P0", "P1", "P2"]);
const HINT_LEVELS = new Set(["L0", "L1", "L2", "L3"]);

export interface PolicyForm {
  mode: string;
  /** Dollars as typed into the form, e.g. "5.00"; empty keeps the default. */
  budgetDollars?: string;
  l3Max?: string;
  defaultOverlayId?: string;
  hintCap?: string;
}

export interface ValidatedPolicy {
  mode: string;
  total_budget_micro?: number;
  l3_max?: number;
  default_overlay_id?: string;
  hint_cap?: string;
}

export type ValidationResult =
  | { ok: true; value: ValidatedPolicy }
  | { ok: false; errors: Record<string, string> };

export function validatePolicyForm(form: PolicyForm): ValidationResult {
  const errors: Record<string, string> = {};
  const value: ValidatedPolicy = { mode: form.mode };

  if (!MODES.has(form.mode)) {
    errors.mode = `mode must be one of P0, P1, P2 (got ${JSON.stringify(form.mode)})`;
  }

  if (form.budgetDollars !== undefined && form.budgetDollars !== "") {
    const dollars = Number(form.budgetDollars);
    if (!Number.isFinite(dollars) || dollars < 0) {
      errors.budgetDollars = "budget must be a non-negative dollar amount";
    } else {
      value.total_budget_micro = Math.round(dollars * 1_000_000);
    }
  }

  if (form.l3Max !== undefined && form.l3Max !== "") {
    const cap = Number(form.l3Max);
    if (!Number.isInteger(cap) || cap < 0) {
      errors.l3Max = "premium-hint cap must be a non-negative integer";
    } else {
      value.l3_max = cap;
    }
  }

  if (form.hintCap !== undefined && form.hintCap !== "") {
    if (!HINT_LEVELS.has(form.hintCap)) {
      errors.hintCap = `hint cap must be one of L0–L3 (got ${JSON.stringify(form.hintCap)})`;
    } else {
      value.hint_cap = form.hintCap;
    }
  }

  if (form.defaultOverlayId !== undefined && form.defaultOverlayId !== "") {
    value.default_overlay_id = form.defaultOverlayId;
  }

  if (Object.keys(errors).length > 0) {
    return { ok: false, errors };
  }
  return { ok: true, value };
}

export class PolicyEditor {
  constructor(private readonly client: ConsoleClient) {}

  /** Validate then submit; an invalid form resolves without any request. */
  async submit(
    form: PolicyForm,
  ): Promise<
    | { ok: true; response: ActionResponse }
    | { ok: false; errors: Record<string, string> }
  > {
    const result = validatePolicyForm(form);
    if (!result.ok) {
      return { ok: false, errors: result.errors };
    }
    const response = await this.client.updatePolicy(result.value);
    return { ok: true, response };
  }
}

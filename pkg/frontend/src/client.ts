/**
 * Thin HTTP client for the routing service and gateway admin endpoints.
 *
 * Every privileged operation is a server call authenticated with the shared
 * secret header; the console holds no policy logic of its own. Errors carry
 * the HTTP status so callers can distinguish a 409 decision conflict from a
 * genuine failure.
 */

import type {
  ActionResponse,
  BudgetStatus,
  Decision,
  PendingApproval,
  PolicyStatus,
  RoutePlanResponse,
  TelemetryPage,
} from "./types.js";

export const SECRET_HEADER = "x-shared-secret";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export interface PolicyUpdate {
  mode: string;
  total_budget_micro?: number;
  l3_max?: number;
  default_overlay_id?: string;
  hint_cap?: string;
}

export interface PlanRequest {
  session_id: string;
  lab_id: string;
  step_id: string;
  query_text: string;
  requested_hint?: string;
  turn_index?: number;
  justification?: string;
  approval_id?: string;
}

export class ConsoleClient {
  constructor(
    private readonly baseUrl: string,
    private readonly secret: string,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: {
        [SECRET_HEADER]: this.secret,
        ...(body !== undefined ? { "content-type": "application/json" } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.parse(text).detail ?? text;
      } catch {
        // non-JSON error body: surface as-is
      }
      throw new ApiError(response.status, String(detail));
    }
    return JSON.parse(text) as T;
  }

  async health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  // ---- routing service ----

  async plan(req: PlanRequest): Promise<RoutePlanResponse> {
    return this.request("POST", "/route/plan", req);
  }

  async getPolicy(): Promise<PolicyStatus> {
    return this.request("GET", "/admin/policy");
  }

  async updatePolicy(update: PolicyUpdate): Promise<ActionResponse> {
    return this.request("POST", "/admin/policy", update);
  }

  async listApprovals(includeDecided = false): Promise<PendingApproval[]> {
    const qs = includeDecided ? "?include_decided=true" : "";
    return this.request("GET", `/admin/approvals${qs}`);
  }

  async decideApproval(
    approvalId: string,
    decision: Decision,
  ): Promise<ActionResponse> {
    return this.request("POST", `/admin/approvals/${approvalId}/decision`, {
      decision,
    });
  }

  async boost(sessionId: string): Promise<ActionResponse> {
    return this.request("POST", `/admin/boost/${sessionId}`);
  }

  async freeze(
    sessionId: string,
    model: string,
    ttl: { ttl_turns?: number; ttl_seconds?: number } = {},
  ): Promise<ActionResponse> {
    return this.request("POST", `/admin/freeze/${sessionId}`, {
      model,
      ...ttl,
    });
  }

  async clearFreeze(sessionId: string): Promise<void> {
    await this.request("DELETE", `/admin/freeze/${sessionId}`);
  }

  async budgets(): Promise<BudgetStatus[]> {
    return this.request("GET", "/admin/budgets");
  }

  // ---- gateway ----

  async telemetry(
    offset = 0,
    limit = 100,
    sessionId?: string,
  ): Promise<TelemetryPage> {
    const params = new URLSearchParams({
      offset: String(offset),
      limit: String(limit),
    });
    if (sessionId) params.set("session_id", sessionId);
    return this.request("GET", `/admin/telemetry?${params}`);
  }

  async swapOverlay(overlayId: string): Promise<ActionResponse> {
    return this.request("POST", "/admin/overlays", { overlay_id: overlayId });
  }
}

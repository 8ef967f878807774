/**
 * End-to-end instructor workflows against a live server process.
 *
 * Spawns the combined routing + gateway HTTP API, then drives the console
 * client through the four core instructor flows: switching the policy mode,
 * approving a held premium-hint turn, denying one, and boosting a session.
 * Every assertion reads back server state (plan responses, the approval
 * queue, and the telemetry feed) — nothing is inferred client-side.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConsoleClient } from "../src/client.js";
import { InstructorConsole } from "../src/console.js";

const SECRET = "console-secret";
const PORT = 18000 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

const SERVER_SCRIPT = `
import sys
import uvicorn
from labroute.cli import build_app
uvicorn.run(build_app("${SECRET}"), host="127.0.0.1", port=int(sys.argv[1]), log_level="warning")
`;

let server: ChildProcess;
const client = new ConsoleClient(BASE, SECRET);
const console_ = new InstructorConsole(client);

const FIT_QUERY =
  "why does my exponential fit look wrong near zero volts on the scope";

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const health = await client.health();
      if (health.status === "ok") return;
    } catch {
      // server still starting
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`server did not become healthy on ${BASE}`);
}

/** Fire a chat turn; resolves when the gateway releases it. */
function chat(
  sessionId: string,
  headers: Record<string, string> = {},
): Promise<Response> {
  return fetch(`${BASE}/v1/chat/completions`, {
    method: "POST",
    headers: {
      "content-type": "application/json",
      "x-shared-secret": SECRET,
      "x-session-id": sessionId,
      "x-lab-id": "led_iv",
      "x-step-id": "fitting",
      ...headers,
    },
    body: JSON.stringify({
      model: "auto",
      messages: [{ role: "user", content: FIT_QUERY }],
    }),
  });
}

async function pendingApprovalFor(
  sessionId: string,
  timeoutMs = 15_000,
): Promise<string> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const pending = await client.listApprovals();
    const match = pending.find((r) => r.session_id === sessionId);
    if (match) return match.approval_id;
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`no pending approval appeared for ${sessionId}`);
}

beforeAll(async () => {
  server = spawn("python3", ["-c", SERVER_SCRIPT, String(PORT)], {
    stdio: ["ignore", "inherit", "inherit"],
  });
  await waitForHealth();
}, 60_000);

afterAll(() => {
  console_.stop();
  server?.kill();
});

describe("policy switching", () => {
  it("P1 plans need no approval; after switching to P2 the same plan is held", async () => {
    const before = await client.getPolicy();
    expect(before.mode).toBe("P1");
    expect(before.approvals_enabled).toBe(false);

    const p1Plan = await client.plan({
      session_id: "e2e-plan-p1",
      lab_id: "led_iv",
      step_id: "fitting",
      query_text: FIT_QUERY,
      requested_hint: "L3",
      justification: "tried two fits, both diverge",
    });
    expect(p1Plan.requires_approval).toBe(false);

    const submit = await console_.policyEditor.submit({ mode: "P2" });
    expect(submit.ok).toBe(true);
    const after = await client.getPolicy();
    expect(after.mode).toBe("P2");
    expect(after.approvals_enabled).toBe(true);

    const p2Plan = await client.plan({
      session_id: "e2e-plan-p2",
      lab_id: "led_iv",
      step_id: "fitting",
      query_text: FIT_QUERY,
      requested_hint: "L3",
      justification: "tried two fits, both diverge",
    });
    expect(p2Plan.requires_approval).toBe(true);
    expect(p2Plan.approval_id).not.toBeNull();

    // Clear the held plan so later queue polls see only their own sessions.
    const outcome = await console_.approvals.decide(
      p2Plan.approval_id as string,
      "denied",
    );
    expect(outcome.ok).toBe(true);

    // Deciding twice is a conflict, reported without throwing.
    const again = await console_.approvals.decide(
      p2Plan.approval_id as string,
      "approved",
    );
    expect(again.ok).toBe(false);
    expect(again.conflict).toBeTruthy();
  }, 60_000);
});

describe("approval workflow over a live held turn", () => {
  it("approving releases the blocked turn at the requested level", async () => {
    const turn = chat("e2e-approve", {
      "x-hint-level": "L3",
      "x-justification": "stuck after several attempts on the residuals",
    });
    const approvalId = await pendingApprovalFor("e2e-approve");
    const outcome = await console_.approvals.decide(approvalId, "approved");
    expect(outcome.ok).toBe(true);

    const response = await turn;
    expect(response.status).toBe(200);

    const page = await client.telemetry(0, 50, "e2e-approve");
    expect(page.events).toHaveLength(1);
    expect(page.events[0].hint_granted).toBe("L3");
    expect(page.events[0].approval_id).toBe(approvalId);
    expect(page.events[0].wait_ms).not.toBeNull();
  }, 60_000);

  it("denying releases the blocked turn one level down", async () => {
    const turn = chat("e2e-deny", {
      "x-hint-level": "L3",
      "x-justification": "please just give me the final fit parameters",
    });
    const approvalId = await pendingApprovalFor("e2e-deny");
    const outcome = await console_.approvals.decide(approvalId, "denied");
    expect(outcome.ok).toBe(true);

    const response = await turn;
    expect(response.status).toBe(200);

    const page = await client.telemetry(0, 50, "e2e-deny");
    expect(page.events).toHaveLength(1);
    expect(page.events[0].hint_granted).toBe("L2");
  }, 60_000);
});

describe("session boost", () => {
  it("a boost marks exactly the next turn for that session", async () => {
    await client.boost("e2e-boost");
    expect((await chat("e2e-boost")).status).toBe(200);
    expect((await chat("e2e-boost")).status).toBe(200);

    const page = await client.telemetry(0, 50, "e2e-boost");
    expect(page.events).toHaveLength(2);
    expect(page.events.map((e) => e.teacher_boost)).toEqual([true, false]);
  }, 60_000);
});

describe("console snapshot", () => {
  it("one refresh aggregates policy, queue, budgets, and the audit feed", async () => {
    const snapshot = await console_.refresh();
    expect(snapshot.policy.mode).toBe("P2");
    expect(snapshot.budgets.length).toBeGreaterThan(0);
    expect(snapshot.feed.length).toBeGreaterThanOrEqual(4);

    const approveRow = snapshot.feed.find(
      (row) => row.sessionId === "e2e-approve",
    );
    expect(approveRow).toBeDefined();
    expect(approveRow?.hintGranted).toBe("L3");
    expect(approveRow?.routeWhy).toBeTruthy();

    // Local-tier turns cost $0, so the fraction may legitimately be zero.
    const bar = snapshot.budgets.find((b) => b.sessionId === "e2e-approve");
    expect(bar).toBeDefined();
    expect(bar?.fraction).toBeGreaterThanOrEqual(0);
    expect(bar?.fraction).toBeLessThanOrEqual(1);
    expect(bar?.totalLabel).toBe("$5.0000");
  }, 60_000);
});

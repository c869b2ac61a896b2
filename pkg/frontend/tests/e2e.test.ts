/** End-to-end console loop against the real vetting service.
 *
 * Spawns `activetest serve` on a scratch dataset, then does exactly what
 * the console does: create a session, answer one full batch, expect one
 * new history point plus a refreshed batch, and reload the page (a second
 * controller resuming by session id) expecting identical state.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildChartModel } from "../src/chart.js";
import { SessionController } from "../src/session.js";
import type { SessionConfig } from "../src/types.js";

const PORT = 8900 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;
let workdir: string;

function writeDataset(path: string, perCategory: number): void {
  const lines: string[] = [];
  for (const category of ["birds", "boats"]) {
    for (let j = 0; j < perCategory; j++) {
      lines.push(
        JSON.stringify({
          id: `${category}-${String(j).padStart(3, "0")}`,
          category,
          score: Math.sin(j * 12.9898 + category.length) * 2,
          noisy_label: j % 3 === 0 ? 1 : 0,
          display: j % 2 === 0 ? `clip ${j} of ${category}` : undefined,
        }),
      );
    }
  }
  writeFileSync(path, lines.join("\n") + "\n");
}

async function waitForHealth(api: ApiClient, timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      await api.health();
      return;
    } catch {
      if (Date.now() > deadline) throw new Error("service did not come up");
      await new Promise((r) => setTimeout(r, 250));
    }
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "console-e2e-"));
  const dataset = join(workdir, "demo.jsonl");
  writeDataset(dataset, 30);
  service = spawn(
    "python3",
    [
      "-m", "activetest.cli", "serve",
      "--dataset", dataset,
      "--host", "127.0.0.1",
      "--port", String(PORT),
      "--data-dir", join(workdir, "sessions"),
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  service.stderr?.on("data", (chunk: Buffer) => {
    const text = chunk.toString();
    if (text.includes("Traceback")) console.error(text);
  });
  await waitForHealth(new ApiClient(BASE));
}, 40000);

afterAll(() => {
  service?.kill("SIGTERM");
});

const CONFIG: SessionConfig = {
  metric: { kind: "prec_at_k", k: 5 },
  estimator: "learned",
  strategy: "random",
  batch_size: 6,
};

describe("console loop against the live service", () => {
  it("answers one full batch: one new history point, refreshed batch, identical reload", async () => {
    const api = new ApiClient(BASE);
    const controller = new SessionController(api);
    expect(await controller.start("demo", CONFIG)).toBe(true);

    let view = controller.view();
    const sessionId = view.sessionId!;
    expect(view.status).toBe("active");
    expect(view.cards).toHaveLength(6);
    expect(view.history).toHaveLength(1);
    const firstBatchIds = view.cards.map((c) => c.item.id);

    // answer the whole batch the way the keyboard flow does
    for (const card of view.cards) {
      if (card.item.noisy_label === 1) {
        await controller.confirm(card.item.id);
      } else {
        await controller.correct(card.item.id); // annotator disagrees
      }
    }

    view = controller.view();
    expect(view.history).toHaveLength(2); // exactly one new history point
    expect(view.estimate?.step).toBe(1);
    expect(view.estimate?.n_vetted).toBe(6);
    expect(view.cards).toHaveLength(6); // auto-fetched fresh batch
    expect(view.cards.every((c) => c.state.kind === "unanswered")).toBe(true);
    expect(view.cards.map((c) => c.item.id)).not.toEqual(firstBatchIds);

    // page reload: a brand-new controller resuming by session id
    const reloaded = new SessionController(new ApiClient(BASE));
    await reloaded.resume(sessionId);
    const again = reloaded.view();
    expect(again.status).toBe(view.status);
    expect(again.estimate).toEqual(view.estimate);
    expect(again.history).toEqual(view.history);
    expect(again.cards.map((c) => c.item.id)).toEqual(view.cards.map((c) => c.item.id));

    // the chart sees exactly the service history
    const model = buildChartModel(again.history, true);
    expect(model.series[0]!.points).toHaveLength(2);
    expect(model.series.map((s) => s.label)).toEqual(["overall", "birds", "boats"]);
  }, 30000);

  it("idempotent replay and conflicting resubmission behave per contract", async () => {
    const api = new ApiClient(BASE);
    const controller = new SessionController(api);
    await controller.start("demo", { ...CONFIG, estimator: "naive", strategy: "mcm" });
    const sessionId = controller.view().sessionId!;
    const target = controller.view().cards[0]!.item;

    // a rival console loads the same pending batch before any answers land
    const rival = new SessionController(new ApiClient(BASE));
    await rival.resume(sessionId);
    expect(rival.view().cards.map((c) => c.item.id)).toContain(target.id);

    await controller.answer(target.id, 1);

    // same truth again: idempotent replay, not a second vet
    const replay = await api.submitVet(sessionId, target.id, 1);
    expect(replay.status).toBe("replay");

    // contradictory truth from the rival: conflict locks its card
    await rival.answer(target.id, 0);
    const locked = rival.view().cards.find((c) => c.item.id === target.id)!;
    expect(locked.state).toEqual({ kind: "locked", serverTruth: 1 });
  }, 30000);

  it("runs a session to exhaustion and shows the exact badge", async () => {
    const api = new ApiClient(BASE);
    const controller = new SessionController(api);
    await controller.start("demo", {
      metric: { kind: "average_precision" },
      estimator: "naive",
      strategy: "random",
      batch_size: 30,
    });
    for (let round = 0; round < 2; round++) {
      for (const card of controller.view().cards) {
        await controller.answer(card.item.id, card.item.noisy_label);
      }
    }
    const view = controller.view();
    expect(view.status).toBe("exhausted");
    expect(view.estimate?.exact).toBe(true);
    expect(buildChartModel(view.history, false).exact).toBe(true);
  }, 30000);
});

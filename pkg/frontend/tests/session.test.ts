import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController, validateConfig } from "../src/session.js";
import type { SessionConfig } from "../src/types.js";
import { MockService, makeItems } from "./mock.js";

const CONFIG: SessionConfig = {
  metric: { kind: "prec_at_k", k: 5 },
  estimator: "naive",
  strategy: "random",
  batch_size: 4,
};

function controllerWith(mock: MockService): SessionController {
  return new SessionController(new ApiClient("http://mock", mock.fetch));
}

describe("setup flow", () => {
  it("renders a queue of batch_size cards after start", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    expect(await controller.start("demo", CONFIG)).toBe(true);
    const view = controller.view();
    expect(view.status).toBe("active");
    expect(view.cards).toHaveLength(4);
    expect(view.estimate?.step).toBe(0);
  });

  it("rejects batch_size 0 inline without any request", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    const ok = await controller.start("demo", { ...CONFIG, batch_size: 0 });
    expect(ok).toBe(false);
    expect(controller.view().fieldErrors["batch_size"]).toMatch(/positive/);
    expect(mock.calls).toHaveLength(0);
  });

  it("surfaces server-side field errors inline", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    // bypass client validation with a value the server dislikes
    const sneaky = { ...CONFIG, batch_size: 1 };
    const fetchRejecting: typeof mock.fetch = async (url, init) => {
      if ((init?.method ?? "GET") === "POST" && url.endsWith("/sessions")) {
        return new Response(
          JSON.stringify({ code: "validation", message: "bad dataset", field: "dataset" }),
          { status: 400, headers: { "content-type": "application/json" } },
        );
      }
      return mock.fetch(url, init);
    };
    const controller2 = new SessionController(new ApiClient("http://mock", fetchRejecting));
    const ok = await controller2.start("absent", sneaky);
    expect(ok).toBe(false);
    expect(controller2.view().fieldErrors["dataset"]).toBe("bad dataset");
    void controller;
  });

  it("shows a retry banner with backoff while the service is down", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4, failuresBeforeUp: 2 });
    const controller = controllerWith(mock);
    const banners: number[] = [];
    controller.onChange((view) => {
      if (view.banner) banners.push(view.banner.nextDelayMs);
    });
    expect(await controller.start("demo", CONFIG)).toBe(true);
    expect(banners).toEqual([500, 1000]); // exponential backoff
    expect(controller.view().banner).toBeNull();
  }, 10000);
});

describe("answering", () => {
  it("confirm submits the noisy label, correct flips it", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    await controller.start("demo", CONFIG);
    const [first, second] = controller.view().cards;
    await controller.confirm(first!.item.id);
    await controller.correct(second!.item.id);
    const vets = mock.calls.filter((c) => c.path.endsWith("/vets"));
    expect((vets[0]!.body as { truth: number }).truth).toBe(first!.item.noisy_label);
    expect((vets[1]!.body as { truth: number }).truth).toBe(1 - second!.item.noisy_label);
  });

  it("double answering submits exactly one vet per item", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    await controller.start("demo", CONFIG);
    const id = controller.view().cards[0]!.item.id;
    await Promise.all([controller.answer(id, 1), controller.answer(id, 1)]);
    await controller.answer(id, 1); // settled answers never resubmit either
    const vets = mock.calls.filter((c) => c.path.endsWith("/vets"));
    expect(vets).toHaveLength(1);
  });

  it("answering the final card adds one history point and a fresh batch", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    await controller.start("demo", CONFIG);
    const before = controller.view().history.length;
    for (const card of controller.view().cards) {
      await controller.answer(card.item.id, 1);
    }
    const view = controller.view();
    expect(view.history.length).toBe(before + 1);
    expect(view.cards).toHaveLength(4);
    expect(view.cards.every((c) => c.state.kind === "unanswered")).toBe(true);
  });

  it("mid-batch answers do not advance the estimate step", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    await controller.start("demo", CONFIG);
    await controller.answer(controller.view().cards[0]!.item.id, 1);
    expect(controller.view().estimate?.step).toBe(0);
    expect(controller.view().history).toHaveLength(1);
  });

  it("locks the card with the server truth on conflict", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const controller = controllerWith(mock);
    await controller.start("demo", CONFIG);
    const id = controller.view().cards[1]!.item.id;
    mock.forceAnswer(id, 0); // someone else answered differently
    await controller.answer(id, 1);
    const card = controller.view().cards.find((c) => c.item.id === id)!;
    expect(card.state).toEqual({ kind: "locked", serverTruth: 0 });
  });

  it("reaches the exhausted terminal state after full vetting", async () => {
    const mock = new MockService({ items: makeItems(4), batchSize: 4 });
    const controller = controllerWith(mock);
    await controller.start("demo", CONFIG);
    for (const card of controller.view().cards) {
      await controller.answer(card.item.id, 0);
    }
    const view = controller.view();
    expect(view.status).toBe("exhausted");
    expect(view.estimate?.exact).toBe(true);
  });
});

describe("reload", () => {
  it("resume rebuilds the same view from the service alone", async () => {
    const mock = new MockService({ items: makeItems(10), batchSize: 4 });
    const first = controllerWith(mock);
    await first.start("demo", CONFIG);
    for (const card of first.view().cards) {
      await first.answer(card.item.id, 1);
    }
    const reloaded = controllerWith(mock);
    await reloaded.resume("mock");
    const a = first.view();
    const b = reloaded.view();
    expect(b.status).toBe(a.status);
    expect(b.history).toEqual(a.history);
    expect(b.estimate).toEqual(a.estimate);
    expect(b.cards.map((c) => c.item.id)).toEqual(a.cards.map((c) => c.item.id));
  });
});

describe("config validation", () => {
  it("flags non-positive K for prec_at_k", () => {
    expect(validateConfig({ ...CONFIG, metric: { kind: "prec_at_k", k: 0 } })).toHaveProperty(
      "metric.k",
    );
    expect(validateConfig({ ...CONFIG, metric: { kind: "average_precision" } })).toEqual({});
  });
});

/** Browser wiring: setup form, answer queue, keyboard handlers, chart.
 *
 * Keyboard-first: `y` confirms the current card's noisy label, `n` corrects
 * it, arrow keys move between unanswered cards. The session id lands in the
 * URL hash so a page reload resumes the identical session from the service.
 */

import { ApiClient } from "./api.js";
import { buildChartModel, renderChartSvg } from "./chart.js";
import { SessionController, type SessionView } from "./session.js";
import type { SessionConfig } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function displayNode(display: unknown): HTMLElement {
  if (typeof display === "string" && /^https?:\/\//.test(display)) {
    if (/\.(mp4|webm|mov)(\?|$)/i.test(display)) {
      const video = document.createElement("video");
      video.src = display;
      video.controls = true;
      return video;
    }
    const img = document.createElement("img");
    img.src = display;
    img.alt = "item media";
    return img;
  }
  const pre = document.createElement("pre");
  pre.textContent = display == null ? "" : JSON.stringify(display, null, 1);
  return pre;
}

function setup() {
  const api = new ApiClient(el<HTMLInputElement>("service-url").value || window.location.origin);
  const controller = new SessionController(api);
  let focusedCard: string | null = null;
  let showCategories = false;

  controller.onChange(render);

  function render(view: SessionView) {
    el("status").textContent = view.status;
    const banner = el("banner");
    if (view.banner) {
      banner.textContent = `${view.banner.message} (attempt ${view.banner.attempt})`;
      banner.hidden = false;
    } else {
      banner.hidden = true;
    }

    const errors = el("form-errors");
    errors.replaceChildren();
    for (const [field, message] of Object.entries(view.fieldErrors)) {
      const line = document.createElement("div");
      line.className = "field-error";
      line.dataset["field"] = field;
      line.textContent = field === "_" ? message : `${field}: ${message}`;
      errors.appendChild(line);
    }

    const queue = el("queue");
    queue.replaceChildren();
    if (view.cards.length && !view.cards.some((c) => c.item.id === focusedCard)) {
      focusedCard = controller.nextUnanswered()?.item.id ?? null;
    }
    for (const card of view.cards) {
      const node = document.createElement("div");
      node.className = `card state-${card.state.kind}`;
      if (card.item.id === focusedCard) node.classList.add("focused");
      const head = document.createElement("div");
      head.textContent =
        `${card.item.id} · ${card.item.category} · score ${card.item.score.toFixed(3)} · ` +
        `noisy=${card.item.noisy_label}`;
      node.appendChild(head);
      node.appendChild(displayNode(card.item.display));
      const state = document.createElement("div");
      state.className = "card-state";
      if (card.state.kind === "answered" || card.state.kind === "inflight") {
        state.textContent = `answered: ${card.state.truth}`;
      } else if (card.state.kind === "locked") {
        state.textContent = `locked (server recorded ${card.state.serverTruth})`;
      } else {
        state.textContent = "y = confirm · n = correct";
      }
      node.appendChild(state);
      node.addEventListener("click", () => {
        focusedCard = card.item.id;
        render(controller.view());
      });
      queue.appendChild(node);
    }

    const estimate = el("estimate");
    if (view.estimate) {
      const overall = view.estimate.overall;
      estimate.textContent =
        `step ${view.estimate.step} · ${(view.estimate.vetted_fraction * 100).toFixed(1)}% vetted · ` +
        `overall ${overall === null ? "n/a" : overall.toFixed(4)}` +
        (view.estimate.exact ? " · exact" : "");
    }
    if (view.history.length > 0) {
      el("chart").innerHTML = renderChartSvg(buildChartModel(view.history, showCategories));
    }
    el("terminal").hidden = view.status !== "exhausted";
  }

  el<HTMLButtonElement>("start").addEventListener("click", () => {
    const metricKind = el<HTMLSelectElement>("metric").value as "prec_at_k" | "average_precision";
    const config: SessionConfig = {
      metric:
        metricKind === "prec_at_k"
          ? { kind: metricKind, k: Number(el<HTMLInputElement>("metric-k").value) }
          : { kind: metricKind },
      estimator: el<HTMLSelectElement>("estimator").value as SessionConfig["estimator"],
      strategy: el<HTMLSelectElement>("strategy").value as SessionConfig["strategy"],
      batch_size: Number(el<HTMLInputElement>("batch-size").value),
    };
    void controller.start(el<HTMLInputElement>("dataset").value, config).then((ok) => {
      if (ok) {
        window.location.hash = controller.view().sessionId ?? "";
      }
    });
  });

  el<HTMLInputElement>("toggle-categories").addEventListener("change", (event) => {
    showCategories = (event.target as HTMLInputElement).checked;
    render(controller.view());
  });

  document.addEventListener("keydown", (event) => {
    const view = controller.view();
    if (view.status !== "active") return;
    const target = focusedCard ?? controller.nextUnanswered()?.item.id ?? null;
    if (!target) return;
    if (event.key === "y") {
      void controller.confirm(target).then(() => {
        focusedCard = controller.nextUnanswered()?.item.id ?? null;
      });
    } else if (event.key === "n") {
      void controller.correct(target).then(() => {
        focusedCard = controller.nextUnanswered()?.item.id ?? null;
      });
    } else if (event.key === "ArrowDown" || event.key === "ArrowUp") {
      const ids = view.cards.map((c) => c.item.id);
      const at = ids.indexOf(target);
      const next = event.key === "ArrowDown" ? at + 1 : at - 1;
      focusedCard = ids[Math.min(Math.max(next, 0), ids.length - 1)] ?? target;
      render(view);
    }
  });

  // a session id in the hash means reload-and-resume
  const existing = window.location.hash.slice(1);
  if (existing) {
    void controller.resume(existing);
  }
}

document.addEventListener("DOMContentLoaded", setup);

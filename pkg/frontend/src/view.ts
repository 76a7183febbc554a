/** Case view: image with heatmap overlays, probability bars,
 * uncertainty gauge, prototype evidence cards, decision panel, and the
 * session timeline.
 *
 * Rendering rules:
 *   - every number on screen comes from a server payload field; bars
 *     and metrics carry the exact value in a data attribute next to
 *     the rounded display text
 *   - discard switches show the optimistic mask, marked pending until
 *     the server confirms, and roll back visibly on error
 *   - in blinded mode no AI output is rendered at all until the
 *     initial label is recorded
 *   - a missing artifact flips its card into an explicit error state
 *     without disabling any control
 */

import type { SessionController } from "./controller.js";
import type { RepresentativeInfo, TopEntry } from "./types.js";
import { eventTime, exact, fixed, pct } from "./format.js";

export interface CaseViewDeps {
  artifactUrl(name: string): string;
  onExport(json: string): void;
}

export interface CaseView {
  el: HTMLElement;
  refresh(): void;
}

function h<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const el = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    el.setAttribute(key, value);
  }
  el.append(...children);
  return el;
}

function markArtifactError(card: HTMLElement, what: string): void {
  card.classList.add("artifact-error");
  if (!card.querySelector(".artifact-error-note")) {
    card.append(
      h(
        "p",
        { class: "artifact-error-note", role: "note" },
        `${what} unavailable`,
      ),
    );
  }
}

export function createCaseView(
  controller: SessionController,
  deps: CaseViewDeps,
): CaseView {
  const el = h("section", { class: "case-view" });
  /** prototype ids whose heatmap is overlaid on the case image */
  const overlays = new Set<string>();

  function focusKey(): string | null {
    const active = document.activeElement;
    return active instanceof HTMLElement
      ? active.getAttribute("data-focus-key")
      : null;
  }

  function restoreFocus(key: string | null): void {
    if (key === null) return;
    const target = el.querySelector<HTMLElement>(`[data-focus-key="${key}"]`);
    target?.focus();
  }

  function renderHeader(): HTMLElement {
    const s = controller.session;
    return h(
      "header",
      { class: "case-head" },
      h("h2", {}, `case ${s.case_id}`),
      h(
        "p",
        { class: "session-meta" },
        `session ${s.session_id} · bank ${s.bank_version}`,
      ),
    );
  }

  function renderError(): HTMLElement | null {
    if (controller.error === null) return null;
    const retry = h(
      "button",
      { class: "retry-btn", "data-focus-key": "retry", type: "button" },
      "retry",
    );
    retry.addEventListener("click", () => controller.retry());
    return h(
      "div",
      { class: "error-banner", role: "alert" },
      h("span", {}, `request failed: ${controller.error} — `),
      retry,
    );
  }

  function renderImagePanel(): HTMLElement {
    const s = controller.session;
    const stack = h("div", { class: "image-stack" });
    const caseImg = h("img", {
      class: "case-image",
      src: deps.artifactUrl(s.image_artifact),
      alt: `case ${s.case_id}`,
    });
    caseImg.addEventListener("error", () =>
      markArtifactError(stack, "case image"),
    );
    stack.append(caseImg);
    if (controller.revealed) {
      for (const entry of s.explanation.top) {
        if (!overlays.has(entry.prototype) || !entry.heatmap_png) continue;
        const ov = h("img", {
          class: "overlay",
          src: deps.artifactUrl(entry.heatmap_png),
          alt: `${entry.prototype} heatmap overlay`,
          "data-prototype": entry.prototype,
        });
        ov.addEventListener("error", () =>
          markArtifactError(stack, `${entry.prototype} overlay`),
        );
        stack.append(ov);
      }
    }
    return h("div", { class: "image-panel" }, stack);
  }

  function renderBars(): HTMLElement {
    const s = controller.session;
    const wrap = h("div", {
      class: "prob-bars",
      "data-ai": "",
      role: "group",
      "aria-label": "class probabilities",
    });
    s.explanation.class_names.forEach((name, i) => {
      const p = s.p_current[i] ?? 0;
      const fill = h("div", { class: "fill" });
      fill.style.width = `${p * 100}%`;
      wrap.append(
        h(
          "div",
          { class: "prob-bar", "data-class": name, "data-p": exact(p) },
          h("span", { class: "bar-label" }, name),
          h("div", { class: "bar-track" }, fill),
          h("span", { class: "bar-value" }, pct(p)),
        ),
      );
    });
    return wrap;
  }

  function renderGauge(): HTMLElement {
    const s = controller.session;
    const d = s.decision;
    const over = d.entropy >= d.threshold;
    const gauge = h(
      "div",
      {
        class: `gauge${over ? " over" : ""}`,
        "data-ai": "",
        "data-entropy": exact(d.entropy),
        "data-uncertainty": exact(s.explanation.uncertainty),
        "data-threshold": exact(d.threshold),
      },
      h(
        "p",
        {},
        `normalized entropy ${fixed(d.entropy)} (threshold ${fixed(
          d.threshold,
        )}) · evidence uncertainty u ${fixed(s.explanation.uncertainty)}`,
      ),
    );
    const meter = h("div", { class: "gauge-track" });
    const needle = h("div", { class: "gauge-needle" });
    needle.style.left = `${Math.min(1, d.entropy) * 100}%`;
    const tick = h("div", { class: "gauge-tick" });
    tick.style.left = `${d.threshold * 100}%`;
    meter.append(needle, tick);
    gauge.append(meter);
    if (d.status === "reject") {
      gauge.append(
        h("p", { class: "reject-banner", role: "status" }, "I do not know"),
      );
    }
    return gauge;
  }

  function renderRepStrip(reps: RepresentativeInfo[] | undefined): HTMLElement {
    const strip = h("div", { class: "rep-strip" });
    for (const rep of reps ?? []) {
      if (rep.patch_png) {
        const img = h("img", {
          class: "rep-patch",
          src: deps.artifactUrl(rep.patch_png),
          alt: `training patch from ${rep.image_id}`,
          title: `${rep.image_id} · similarity ${fixed(rep.similarity)}`,
          "data-similarity": exact(rep.similarity),
        });
        img.addEventListener("error", function (this: HTMLImageElement) {
          const card = this.closest<HTMLElement>(".proto-card");
          if (card) markArtifactError(card, "representative patch");
        });
        strip.append(img);
      } else {
        strip.append(
          h("span", { class: "rep-patch missing" }, rep.image_id),
        );
      }
    }
    return strip;
  }

  function renderCard(entry: TopEntry, index: number): HTMLElement {
    const s = controller.session;
    const card = h("article", {
      class: "proto-card",
      "data-prototype": entry.prototype,
      "data-contribution": exact(entry.contribution),
    });
    card.append(
      h(
        "h3",
        {},
        `${entry.prototype} · ${entry.class_name}`,
      ),
      h(
        "p",
        { class: "card-metrics" },
        h(
          "span",
          { "data-exact": exact(entry.weight) },
          `w ${fixed(entry.weight)}`,
        ),
        " × ",
        h(
          "span",
          { "data-exact": exact(entry.similarity) },
          `s ${fixed(entry.similarity)}`,
        ),
        " = ",
        h(
          "span",
          { class: "contribution", "data-exact": exact(entry.contribution) },
          fixed(entry.contribution),
        ),
      ),
    );

    if (entry.heatmap_png) {
      const thumb = h("img", {
        class: "heatmap-thumb",
        src: deps.artifactUrl(entry.heatmap_png),
        alt: `${entry.prototype} activation heatmap`,
      });
      thumb.addEventListener("error", () =>
        markArtifactError(card, "heatmap"),
      );
      card.append(thumb);
    } else {
      markArtifactError(card, "heatmap");
    }

    const overlayOn = overlays.has(entry.prototype);
    const overlayBtn = h(
      "button",
      {
        class: "overlay-toggle",
        type: "button",
        "aria-pressed": String(overlayOn),
        "data-focus-key": `overlay:${entry.prototype}`,
      },
      overlayOn ? "hide overlay" : "show overlay",
    );
    overlayBtn.addEventListener("click", () => {
      if (overlays.has(entry.prototype)) overlays.delete(entry.prototype);
      else overlays.add(entry.prototype);
      refresh();
    });

    const on = controller.displayMask[index] === 1;
    const confirmed = controller.confirmedMask[index] === 1;
    const discard = h(
      "button",
      {
        class: `discard-switch${on === confirmed ? "" : " pending"}`,
        type: "button",
        role: "switch",
        "aria-checked": String(on),
        "aria-busy": String(on !== confirmed),
        "aria-label": `use ${entry.prototype} in the score`,
        "data-index": String(index),
        "data-confirmed": String(controller.confirmedMask[index] ?? 1),
        "data-focus-key": `switch:${entry.prototype}`,
      },
      on ? "counted" : "discarded",
    );
    discard.addEventListener("click", () => controller.toggle(index));

    card.append(
      h("div", { class: "card-actions" }, overlayBtn, discard),
      renderRepStrip(s.representatives?.[entry.prototype]),
    );
    return card;
  }

  function renderCards(): HTMLElement {
    const s = controller.session;
    const wrap = h("div", { class: "proto-cards", "data-ai": "" });
    const order = s.explanation.top
      .map((entry, index) => ({ entry, index }))
      .sort((a, b) => b.entry.contribution - a.entry.contribution);
    for (const { entry, index } of order) {
      wrap.append(renderCard(entry, index));
    }
    return wrap;
  }

  function renderDecision(): HTMLElement {
    const s = controller.session;
    const panel = h("div", { class: "decision-panel" });
    if (controller.revealed) {
      const d = s.decision;
      panel.append(
        h(
          "p",
          { class: "model-decision", "data-ai": "" },
          d.status === "accept"
            ? `model proposes ${d.class_name}`
            : "model abstains (I do not know)",
        ),
      );
    }
    const prompt =
      controller.mode === "blinded" && !controller.revealed
        ? "step 1 — record your blinded read:"
        : "record the final decision:";
    panel.append(h("p", { class: "label-prompt" }, prompt));
    const group = h("div", {
      class: "label-buttons",
      role: "group",
      "aria-label": "decision",
    });
    const options = [...s.explanation.class_names, "reject", "unsure"];
    for (const option of options) {
      const btn = h(
        "button",
        {
          class: `label-btn${s.human_label === option ? " recorded" : ""}`,
          type: "button",
          "data-label": option,
          "data-focus-key": `label:${option}`,
        },
        option,
      );
      if (controller.labelInFlight) btn.setAttribute("disabled", "");
      btn.addEventListener("click", () => void controller.recordLabel(option));
      group.append(btn);
    }
    panel.append(group);
    if (s.human_label !== null) {
      panel.append(
        h(
          "p",
          { class: "recorded-label" },
          `recorded label: ${s.human_label}`,
        ),
      );
    }
    return panel;
  }

  function renderTimeline(): HTMLElement {
    const s = controller.session;
    const list = h("ol", { class: "timeline", "aria-label": "session events" });
    for (const event of s.events) {
      list.append(
        h(
          "li",
          { "data-seq": String(event.seq) },
          `#${event.seq} ${event.type} @ ${eventTime(event.ts)}`,
        ),
      );
    }
    return list;
  }

  function renderFooter(): HTMLElement {
    const exportBtn = h(
      "button",
      {
        class: "export-btn",
        type: "button",
        "data-focus-key": "export",
      },
      "export session JSON",
    );
    exportBtn.addEventListener("click", () =>
      deps.onExport(controller.exportJson()),
    );
    return h("footer", { class: "case-foot" }, exportBtn);
  }

  function refresh(): void {
    const key = focusKey();
    el.replaceChildren();
    el.append(renderHeader());
    const error = renderError();
    if (error) el.append(error);
    if (!controller.revealed) {
      el.append(
        h(
          "aside",
          { class: "blinded-notice", role: "note" },
          "AI output withheld — record your initial read first",
        ),
      );
    }
    const body = h("div", { class: "case-body" }, renderImagePanel());
    if (controller.revealed) {
      body.append(
        h("div", { class: "ai-panel" }, renderBars(), renderGauge()),
      );
    }
    el.append(body);
    if (controller.revealed) el.append(renderCards());
    el.append(renderDecision(), renderTimeline(), renderFooter());
    restoreFocus(key);
  }

  controller.onChange = refresh;
  refresh();
  return { el, refresh };
}

/** Application bootstrap: health line, case queue, review mode switch,
 * and mounting a case view per opened session. */

import { ApiClient } from "./api.js";
import { SessionController, type ReviewMode } from "./controller.js";
import { createCaseView } from "./view.js";

function download(json: string): void {
  const blob = new Blob([json], { type: "application/json" });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = `session-${Date.now()}.json`;
  a.click();
  URL.revokeObjectURL(url);
}

async function boot(): Promise<void> {
  const api = new ApiClient();
  const app = document.getElementById("app");
  if (!app) throw new Error("missing #app mount point");

  const health = await api.healthz();
  const healthLine = document.createElement("p");
  healthLine.className = "health-line";
  healthLine.textContent = health.model_loaded
    ? `model loaded · bank ${health.bank_version} · ${health.sessions} sessions`
    : "no model loaded — start the service with a checkpoint";

  const queue = document.createElement("nav");
  queue.className = "case-queue";
  queue.setAttribute("aria-label", "case queue");

  const modeLabel = document.createElement("label");
  modeLabel.className = "mode-switch";
  const modeBox = document.createElement("input");
  modeBox.type = "checkbox";
  modeLabel.append(modeBox, " blinded first (two-step protocol)");

  const main = document.createElement("main");
  main.className = "workbench-main";
  main.append("select a case from the queue");

  app.replaceChildren(healthLine, modeLabel, queue, main);

  async function openCase(caseId: string): Promise<void> {
    main.replaceChildren(`loading ${caseId} ...`);
    try {
      const session = await api.predictCase(caseId);
      const mode: ReviewMode = modeBox.checked ? "blinded" : "standard";
      const controller = new SessionController(api, session, mode);
      const view = createCaseView(controller, {
        artifactUrl: (name) => api.artifactUrl(name),
        onExport: download,
      });
      main.replaceChildren(view.el);
    } catch (err) {
      const msg = err instanceof Error ? err.message : String(err);
      main.replaceChildren(`failed to open ${caseId}: ${msg}`);
    }
  }

  for (const split of ["test", "ood"]) {
    try {
      const listing = await api.cases(split, 20);
      const heading = document.createElement("h2");
      heading.textContent = `${split} cases`;
      queue.append(heading);
      const list = document.createElement("ul");
      for (const caseId of listing.case_ids) {
        const item = document.createElement("li");
        const btn = document.createElement("button");
        btn.type = "button";
        btn.textContent = caseId;
        btn.addEventListener("click", () => void openCase(caseId));
        item.append(btn);
        list.append(item);
      }
      queue.append(list);
    } catch {
      /* split not present on this corpus; queue section omitted */
    }
  }
}

void boot().catch((err: unknown) => {
  const msg = err instanceof Error ? err.message : String(err);
  const app = document.getElementById("app");
  if (app) app.replaceChildren(`failed to reach the service: ${msg}`);
});

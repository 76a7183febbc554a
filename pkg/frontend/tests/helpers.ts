import { ApiClient } from "../src/api.js";
import {
  SessionController,
  type ReviewMode,
} from "../src/controller.js";
import { createCaseView, type CaseView } from "../src/view.js";
import { FakeService, fixture } from "./fake_service.js";

export function tick(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

export async function waitFor(
  predicate: () => boolean,
  what = "condition",
): Promise<void> {
  for (let i = 0; i < 200; i += 1) {
    if (predicate()) return;
    await tick();
  }
  throw new Error(`timed out waiting for ${what}`);
}

export function settle(controller: SessionController): Promise<void> {
  return waitFor(
    () => !controller.inFlight && !controller.labelInFlight,
    "controller to settle",
  );
}

export interface Harness {
  fake: FakeService;
  api: ApiClient;
  controller: SessionController;
  view: CaseView;
  el: HTMLElement;
  exports: string[];
}

/** Open a session on the captured accept (or reject) case and mount
 * the view into the document. */
export async function openCase(
  options: { caseId?: string; mode?: ReviewMode } = {},
): Promise<Harness> {
  const fake = new FakeService();
  const api = new ApiClient({ fetchFn: fake.fetch });
  const caseId = options.caseId ?? fixture.accept.case_id;
  const session = await api.predictCase(caseId);
  const controller = new SessionController(api, session, options.mode);
  const exports: string[] = [];
  const view = createCaseView(controller, {
    artifactUrl: (name) => `/artifacts/${name}`,
    onExport: (json) => exports.push(json),
  });
  document.body.replaceChildren(view.el);
  return { fake, api, controller, view, el: view.el, exports };
}

export function barValues(el: HTMLElement): string[] {
  return [...el.querySelectorAll<HTMLElement>(".prob-bar")].map(
    (bar) => bar.dataset.p ?? "",
  );
}

export function switchByIndex(
  el: HTMLElement,
  index: number,
): HTMLButtonElement {
  const btn = el.querySelector<HTMLButtonElement>(
    `.discard-switch[data-index="${index}"]`,
  );
  if (!btn) throw new Error(`no discard switch with index ${index}`);
  return btn;
}

export { fixture };

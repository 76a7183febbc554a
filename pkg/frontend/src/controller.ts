/** Session state machine between the service and the view.
 *
 * The server is the source of truth: `session` only ever holds a
 * payload the service returned. Discard toggles update `desiredMask`
 * optimistically; at most one intervention request is in flight, and
 * toggles arriving while one is pending coalesce into the next request,
 * so the final view always matches the last-acknowledged server state.
 * A failed request rolls `desiredMask` back to the confirmed mask and
 * arms a retry.
 */

import type { ApiClient } from "./api.js";
import type { SessionPayload } from "./types.js";

export type ReviewMode = "standard" | "blinded";

function masksEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

function describeError(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export class SessionController {
  session: SessionPayload;
  desiredMask: number[];
  inFlight = false;
  labelInFlight = false;
  error: string | null = null;
  /** mask the user wanted when the last request failed; retry target */
  private failedMask: number[] | null = null;
  readonly mode: ReviewMode;
  /** blinded sessions withhold AI output until the initial label lands */
  revealed: boolean;
  initialLabel: string | null = null;
  onChange: () => void = () => {};

  constructor(
    private readonly api: ApiClient,
    session: SessionPayload,
    mode: ReviewMode = "standard",
  ) {
    this.session = session;
    this.desiredMask = [...session.mask];
    this.mode = mode;
    this.revealed = mode === "standard";
  }

  private emit(): void {
    this.onChange();
  }

  /** Switch position shown in the UI: optimistic, pending-aware. */
  get displayMask(): number[] {
    return [...this.desiredMask];
  }

  get confirmedMask(): number[] {
    return [...this.session.mask];
  }

  get pending(): boolean {
    return this.inFlight || !masksEqual(this.desiredMask, this.session.mask);
  }

  toggle(index: number): void {
    if (index < 0 || index >= this.desiredMask.length) return;
    this.desiredMask = [...this.desiredMask];
    this.desiredMask[index] = this.desiredMask[index] ? 0 : 1;
    this.error = null;
    this.failedMask = null;
    this.emit();
    void this.pump();
  }

  retry(): void {
    if (this.failedMask !== null) {
      this.desiredMask = [...this.failedMask];
      this.failedMask = null;
    }
    this.error = null;
    this.emit();
    void this.pump();
  }

  private async pump(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      while (!masksEqual(this.desiredMask, this.session.mask)) {
        const want = [...this.desiredMask];
        try {
          const updated = await this.api.intervene(
            this.session.session_id,
            want,
            this.session.bank_version,
          );
          this.session = updated;
          this.emit();
        } catch (err) {
          this.failedMask = [...this.desiredMask];
          this.desiredMask = [...this.session.mask];
          this.error = describeError(err);
          break;
        }
      }
    } finally {
      this.inFlight = false;
      this.emit();
    }
  }

  async recordLabel(label: string): Promise<void> {
    if (this.labelInFlight) return;
    this.labelInFlight = true;
    this.emit();
    try {
      const updated = await this.api.label(this.session.session_id, label);
      this.session = updated;
      this.error = null;
      if (this.mode === "blinded" && !this.revealed) {
        this.initialLabel = label;
        this.revealed = true;
      }
    } catch (err) {
      this.error = describeError(err);
    } finally {
      this.labelInFlight = false;
      this.emit();
    }
  }

  /** Full session history as a JSON document for download. */
  exportJson(): string {
    return JSON.stringify(
      {
        exported_at: new Date().toISOString(),
        mode: this.mode,
        initial_label: this.initialLabel,
        session: this.session,
      },
      null,
      1,
    );
  }
}

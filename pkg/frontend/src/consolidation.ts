/**
 * Consolidation panel: fire POST /consolidate and render the returned
 * report verbatim — every number in the panel is a field of the API
 * response, never a client-side computation.
 */

import { ApiClient, ApiError, ConsolidationReport } from "./api.js";
import { clear, el } from "./dom.js";

const REPORT_FIELDS: Array<[keyof ConsolidationReport, string]> = [
  ["staging_in", "staged sections in"],
  ["discarded", "discarded"],
  ["direct_moves", "direct moves"],
  ["compile_calls", "compile calls"],
  ["compiled_out", "compiled out"],
  ["canonical_consumed", "canonical consumed"],
  ["deferred", "deferred"],
  ["canonical_before", "canonical before"],
  ["canonical_after", "canonical after"],
];

export interface ConsolidationOptions {
  /** Called after a successful run (the app refreshes the inspector here). */
  afterRun?: () => void | Promise<void>;
}

export class ConsolidationPanel {
  readonly root: HTMLElement;
  lastReport: ConsolidationReport | null = null;
  private readonly button: HTMLButtonElement;
  private readonly output: HTMLElement;

  constructor(
    private readonly client: ApiClient,
    private readonly options: ConsolidationOptions = {},
  ) {
    this.button = el(
      "button",
      { type: "button", class: "consolidate", "data-testid": "consolidate-button" },
      "Run sleep consolidation",
    );
    this.button.addEventListener("click", () => void this.run());
    this.output = el("div", { class: "report-output" });
    this.root = el(
      "section",
      { class: "consolidation pane" },
      el("h2", {}, "Consolidation"),
      this.button,
      this.output,
    );
  }

  async run(): Promise<void> {
    this.button.disabled = true;
    try {
      const report = await this.client.consolidate();
      this.lastReport = report;
      this.renderReport(report);
      await this.options.afterRun?.();
    } catch (err) {
      this.renderError(err);
    } finally {
      this.button.disabled = false;
    }
  }

  private renderReport(report: ConsolidationReport): void {
    clear(this.output);
    const list = el("dl", { class: "report", "data-testid": "consolidation-report" });
    for (const [field, label] of REPORT_FIELDS) {
      list.append(
        el(
          "div",
          { class: "report-row", "data-field": field },
          el("dt", {}, label),
          el("dd", {}, String(report[field])),
        ),
      );
    }
    this.output.append(list);
    if (report.compile_events.length > 0) {
      const events = el("ul", { class: "compile-events" });
      for (const event of report.compile_events) {
        events.append(
          el(
            "li",
            {},
            `${event.staged_id} + [${event.overlap_ids.join(", ")}] → ` +
              `[${event.output_ids.join(", ")}]`,
          ),
        );
      }
      this.output.append(el("h3", {}, "compile events"), events);
    }
  }

  private renderError(err: unknown): void {
    clear(this.output);
    const stage = err instanceof ApiError ? err.stage : "client";
    const message = err instanceof Error ? err.message : String(err);
    this.output.append(
      el(
        "div",
        { class: "error-banner", "data-testid": "error-banner", "data-stage": stage },
        `[${stage}] ${message}`,
      ),
    );
  }
}

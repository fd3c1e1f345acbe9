/**
 * Store inspector: tabbed staging/canonical listing with a category filter.
 *
 * Each row shows topic, summary, category, creation time, and either the
 * remaining TTL or an EXPIRED badge; clicking a row loads the full section
 * content. The header counts are always re-read from GET /stats rather than
 * derived from the rows, so the inspector doubles as a consistency check of
 * the two endpoints.
 */

import { ApiClient, ApiError, SectionSummary, StoreName } from "./api.js";
import { clear, el } from "./dom.js";
import { timestamp, ttlLabel } from "./format.js";

export class InspectorView {
  readonly root: HTMLElement;
  private store: StoreName = "staging";
  private category = "";
  private readonly counts: HTMLElement;
  private readonly tabs: Record<StoreName, HTMLButtonElement>;
  private readonly body: HTMLTableSectionElement;
  private readonly detail: HTMLElement;
  private readonly status: HTMLElement;

  constructor(private readonly client: ApiClient) {
    this.counts = el("span", { class: "inspector-counts", "data-testid": "inspector-counts" });
    this.tabs = {
      staging: el("button", { type: "button", "data-testid": "tab-staging" }, "staging"),
      canonical: el("button", { type: "button", "data-testid": "tab-canonical" }, "canonical"),
    };
    for (const name of ["staging", "canonical"] as const) {
      this.tabs[name].addEventListener("click", () => {
        this.store = name;
        void this.refresh();
      });
    }
    const filter = el("input", {
      type: "text",
      class: "category-filter",
      "data-testid": "category-filter",
      placeholder: "filter by category…",
    });
    filter.addEventListener("change", () => {
      this.category = filter.value.trim();
      void this.refresh();
    });

    this.body = el("tbody", { "data-testid": "section-rows" });
    const table = el(
      "table",
      { class: "sections" },
      el(
        "thead",
        {},
        el(
          "tr",
          {},
          el("th", {}, "topic"),
          el("th", {}, "summary"),
          el("th", {}, "category"),
          el("th", {}, "created"),
          el("th", {}, "TTL"),
        ),
      ),
      this.body,
    );
    this.detail = el("div", { class: "section-detail", "data-testid": "section-detail" });
    this.status = el("div", { class: "inspector-status", "data-testid": "inspector-status" });
    this.root = el(
      "section",
      { class: "inspector pane" },
      el(
        "h2",
        {},
        "Knowledge store ",
        this.counts,
      ),
      el("div", { class: "inspector-controls" }, this.tabs.staging, this.tabs.canonical, filter),
      this.status,
      table,
      this.detail,
    );
  }

  /** Reload the active tab; counts come from /stats, rows from /sections. */
  async refresh(): Promise<void> {
    this.tabs.staging.classList.toggle("active", this.store === "staging");
    this.tabs.canonical.classList.toggle("active", this.store === "canonical");
    try {
      const [stats, sections] = await Promise.all([
        this.client.stats(),
        this.client.sections(this.store, this.category || undefined),
      ]);
      this.counts.textContent = `staging ${stats.staging_count} · canonical ${stats.canonical_count}`;
      this.counts.setAttribute("data-staging", String(stats.staging_count));
      this.counts.setAttribute("data-canonical", String(stats.canonical_count));
      this.renderRows(sections);
      this.status.textContent = "";
    } catch (err) {
      const stage = err instanceof ApiError ? err.stage : "client";
      this.status.textContent = `[${stage}] ${err instanceof Error ? err.message : String(err)}`;
    }
  }

  private renderRows(sections: SectionSummary[]): void {
    clear(this.body);
    if (sections.length === 0) {
      this.body.append(
        el(
          "tr",
          { class: "empty-state" },
          el("td", { colspan: "5", "data-testid": "empty-state" }, "no sections in this view"),
        ),
      );
      return;
    }
    for (const section of sections) {
      const ttl = section.expired
        ? el("span", { class: "badge expired", "data-testid": "expired-badge" }, "EXPIRED")
        : el("span", { class: "ttl" }, ttlLabel(section));
      const row = el(
        "tr",
        { class: "section-row", "data-testid": "section-row", "data-section-id": section.id },
        el("td", { class: "topic" }, section.topic),
        el("td", { class: "summary" }, section.summary),
        el("td", { class: "category" }, section.category),
        el("td", { class: "created" }, timestamp(section.created_at)),
        el("td", { class: "ttl-cell", "data-testid": "ttl-cell" }, ttl),
      );
      row.addEventListener("click", () => void this.showSection(section.id));
      this.body.append(row);
    }
  }

  /** Load one section's full content into the detail panel. */
  async showSection(id: string): Promise<void> {
    try {
      const section = await this.client.section(id);
      clear(this.detail);
      this.detail.append(
        el("h3", {}, section.topic),
        el(
          "div",
          { class: "detail-meta" },
          `${section.category} · ${section.store} · created ${timestamp(section.created_at)} · ` +
            ttlLabel(section),
        ),
        el("pre", { class: "detail-content", "data-testid": "detail-content" }, section.content),
      );
    } catch (err) {
      const stage = err instanceof ApiError ? err.stage : "client";
      this.status.textContent = `[${stage}] ${err instanceof Error ? err.message : String(err)}`;
    }
  }
}

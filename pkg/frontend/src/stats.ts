/**
 * Header stats strip: polls GET /stats and shows live store counters.
 * Keeps a connectivity flag so the UI can signal when the service is
 * unreachable instead of rendering stale numbers silently.
 */

import { ApiClient } from "./api.js";
import { el } from "./dom.js";
import { percent } from "./format.js";

export class StatsBar {
  readonly root: HTMLElement;
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly staging: HTMLElement;
  private readonly canonical: HTMLElement;
  private readonly hitRate: HTMLElement;
  private readonly teacherCalls: HTMLElement;
  private readonly queries: HTMLElement;

  constructor(
    private readonly client: ApiClient,
    private readonly intervalMs = 2000,
  ) {
    this.staging = el("span", { class: "stat", "data-testid": "stat-staging" }, "–");
    this.canonical = el("span", { class: "stat", "data-testid": "stat-canonical" }, "–");
    this.hitRate = el("span", { class: "stat", "data-testid": "stat-hit-rate" }, "–");
    this.teacherCalls = el(
      "span",
      { class: "stat", "data-testid": "stat-teacher-calls" },
      "–",
    );
    this.queries = el("span", { class: "stat", "data-testid": "stat-queries" }, "–");
    this.root = el(
      "div",
      { class: "stats-bar", "data-testid": "stats-bar", "data-state": "unknown" },
      this.labelled("staging", this.staging),
      this.labelled("canonical", this.canonical),
      this.labelled("cache hit rate", this.hitRate),
      this.labelled("teacher calls", this.teacherCalls),
      this.labelled("queries", this.queries),
    );
  }

  private labelled(label: string, value: HTMLElement): HTMLElement {
    return el("span", { class: "stat-group" }, el("label", {}, label), value);
  }

  async refresh(): Promise<void> {
    try {
      const stats = await this.client.stats();
      this.staging.textContent = String(stats.staging_count);
      this.canonical.textContent = String(stats.canonical_count);
      this.hitRate.textContent = percent(stats.cache_hit_rate);
      this.teacherCalls.textContent = String(stats.teacher_calls_total);
      this.queries.textContent = String(stats.queries);
      this.root.setAttribute("data-state", "online");
    } catch {
      this.root.setAttribute("data-state", "offline");
    }
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    this.timer = setInterval(() => void this.refresh(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

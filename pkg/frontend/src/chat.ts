/**
 * Chat view: one persistent session against POST /query.
 *
 * Each turn renders the answer, a route badge (factual vs. bypass), the
 * cited sections as chips that jump into the inspector, and the per-query
 * metrics the service reported.
 */

import { ApiClient, ApiError, QueryResponse } from "./api.js";
import { el } from "./dom.js";

export interface ChatOptions {
  onReference?: (sectionId: string) => void;
  sessionId?: string;
}

function newSessionId(): string {
  const rng = globalThis.crypto;
  if (rng && "randomUUID" in rng) return `console-${rng.randomUUID()}`;
  return `console-${Math.random().toString(36).slice(2)}`;
}

export class ChatView {
  readonly root: HTMLElement;
  readonly sessionId: string;
  private readonly log: HTMLElement;
  private readonly input: HTMLInputElement;
  private readonly button: HTMLButtonElement;

  constructor(
    private readonly client: ApiClient,
    private readonly options: ChatOptions = {},
  ) {
    this.sessionId = options.sessionId ?? newSessionId();
    this.log = el("div", { class: "chat-log", "data-testid": "chat-log" });
    this.input = el("input", {
      class: "chat-input",
      "data-testid": "chat-input",
      type: "text",
      placeholder: "Ask something…",
      autocomplete: "off",
    });
    this.button = el("button", { type: "submit", "data-testid": "chat-send" }, "Send");
    const form = el("form", { class: "chat-form" }, this.input, this.button);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const text = this.input.value.trim();
      if (text) {
        this.input.value = "";
        void this.send(text);
      }
    });
    this.root = el("section", { class: "chat pane" }, el("h2", {}, "Chat"), this.log, form);
  }

  /** Send one query and render the outcome; errors become a stage-tagged banner. */
  async send(text: string): Promise<void> {
    this.log.append(el("div", { class: "chat-turn user" }, el("p", { class: "user-text" }, text)));
    this.button.disabled = true;
    try {
      const response = await this.client.query(text, this.sessionId);
      this.renderResponse(response);
    } catch (err) {
      this.renderError(err);
    } finally {
      this.button.disabled = false;
      this.log.scrollTop = this.log.scrollHeight;
    }
  }

  private renderResponse(response: QueryResponse): void {
    const badgeText = response.degraded ? `${response.route} · degraded` : response.route;
    const badge = el(
      "span",
      { class: `route-badge route-${response.route}`, "data-testid": "route-badge" },
      badgeText,
    );
    const turn = el(
      "div",
      { class: "chat-turn assistant" },
      badge,
      el("p", { class: "answer", "data-testid": "answer" }, response.answer),
    );
    if (response.references.length > 0) {
      const chips = el("div", { class: "refs" });
      for (const reference of response.references) {
        const chip = el(
          "button",
          {
            class: "ref-chip",
            type: "button",
            "data-testid": "ref-chip",
            "data-section-id": reference.id,
            title: reference.id,
          },
          reference.topic,
        );
        chip.addEventListener("click", () => this.options.onReference?.(reference.id));
        chips.append(chip);
      }
      turn.append(chips);
    }
    const m = response.metrics;
    turn.append(
      el(
        "div",
        { class: "metrics", "data-testid": "metrics" },
        `cache hits ${m.cache_hits} · teacher calls ${m.teacher_calls} · ` +
          `refreshed ${m.refreshed_sections} · ${m.latency_ms.toFixed(1)} ms`,
      ),
    );
    this.log.append(turn);
  }

  private renderError(err: unknown): void {
    const stage = err instanceof ApiError ? err.stage : "client";
    const message = err instanceof Error ? err.message : String(err);
    this.log.append(
      el(
        "div",
        { class: "error-banner", "data-testid": "error-banner", "data-stage": stage },
        `[${stage}] ${message}`,
      ),
    );
  }
}

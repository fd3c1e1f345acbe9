/**
 * Console entry point: assembles the chat pane, the store inspector,
 * the consolidation panel, and the header stats strip, and wires the
 * cross-component refresh hooks.
 */

import { ApiClient } from "./api.js";
import { ChatView } from "./chat.js";
import { ConsolidationPanel } from "./consolidation.js";
import { el } from "./dom.js";
import { InspectorView } from "./inspector.js";
import { StatsBar } from "./stats.js";

declare global {
  interface Window {
    SAGEMEM_API_BASE?: string;
  }
}

export interface App {
  chat: ChatView;
  inspector: InspectorView;
  panel: ConsolidationPanel;
  stats: StatsBar;
}

export function mountApp(root: HTMLElement, client: ApiClient): App {
  const stats = new StatsBar(client);
  const inspector = new InspectorView(client);
  const chat = new ChatView(client, {
    onReference: (id) => void inspector.showSection(id),
  });
  const panel = new ConsolidationPanel(client, {
    afterRun: async () => {
      await inspector.refresh();
      await stats.refresh();
    },
  });

  root.append(
    el(
      "header",
      { class: "console-header" },
      el("h1", {}, "knowledge console"),
      stats.root,
    ),
    el(
      "main",
      { class: "console-main" },
      chat.root,
      el("div", { class: "side-column" }, inspector.root, panel.root),
    ),
  );

  void inspector.refresh();
  void stats.refresh();
  stats.start();
  return { chat, inspector, panel, stats };
}

// Browser bootstrap; tests import mountApp and drive it directly.
if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root !== null) {
    mountApp(root, new ApiClient(window.SAGEMEM_API_BASE ?? ""));
  }
}

/**
 * Conformance suite: boots the real knowledge service in mock mode with the
 * demo fixtures and drives the actual console components against it.
 *
 * Checks, in order:
 *   1. inspector header counts equal GET /stats, rows equal the staging view
 *   2. the expired badge appears once a fixture section crosses its TTL
 *   3. a chat round-trip renders the answer and its reference chips
 *   4. the consolidation button renders exactly the report the API returned
 *   5. the stats bar mirrors GET /stats
 */

import { ChildProcess, spawn } from "node:child_process";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ConsolidationReport } from "../src/api.js";
import { App, mountApp } from "../src/main.js";

const PORT = 18_000 + Math.floor(Math.random() * 10_000);
const BASE = `http://127.0.0.1:${PORT}`;

const REPORT_FIELDS = [
  "staging_in",
  "discarded",
  "direct_moves",
  "compile_calls",
  "compiled_out",
  "canonical_consumed",
  "deferred",
  "canonical_before",
  "canonical_after",
] as const;

const sleep = (ms: number): Promise<void> => new Promise((resolve) => setTimeout(resolve, ms));

function byTestId(root: HTMLElement, id: string): HTMLElement {
  const node = root.querySelector(`[data-testid="${id}"]`);
  if (node === null) throw new Error(`missing [data-testid=${id}]`);
  return node as HTMLElement;
}

function allByTestId(root: HTMLElement, id: string): HTMLElement[] {
  return Array.from(root.querySelectorAll(`[data-testid="${id}"]`));
}

function sectionRow(root: HTMLElement, id: string): HTMLElement | undefined {
  return allByTestId(root, "section-row").find(
    (row) => row.getAttribute("data-section-id") === id,
  );
}

describe("console against a live seeded service", () => {
  let child: ChildProcess;
  let serviceLog = "";
  let client: ApiClient;
  let root: HTMLElement;
  let app: App;

  beforeAll(async () => {
    child = spawn(
      "python3",
      [
        "-m",
        "sagemem.cli",
        "--mock",
        "serve",
        "--host",
        "127.0.0.1",
        "--port",
        String(PORT),
        "--seed-demo",
      ],
      { stdio: ["ignore", "pipe", "pipe"] },
    );
    child.stdout?.on("data", (chunk: Buffer) => (serviceLog += chunk.toString()));
    child.stderr?.on("data", (chunk: Buffer) => (serviceLog += chunk.toString()));

    client = new ApiClient(BASE, (input, init) => globalThis.fetch(input, init));
    const deadline = Date.now() + 30_000;
    for (;;) {
      if (child.exitCode !== null) {
        throw new Error(`service exited with code ${child.exitCode}:\n${serviceLog}`);
      }
      try {
        await client.health();
        break;
      } catch (err) {
        if (Date.now() > deadline) {
          throw new Error(`service never became healthy: ${String(err)}\n${serviceLog}`);
        }
        await sleep(150);
      }
    }

    root = document.createElement("div");
    document.body.append(root);
    app = mountApp(root, client);
  });

  afterAll(async () => {
    app?.stats.stop();
    if (child && child.exitCode === null) {
      child.kill("SIGTERM");
      await new Promise<void>((resolve) => {
        const force = setTimeout(() => {
          child.kill("SIGKILL");
          resolve();
        }, 5000);
        child.once("exit", () => {
          clearTimeout(force);
          resolve();
        });
      });
    }
  });

  it("inspector counts equal /stats and rows equal the staging listing", async () => {
    const stats = await client.stats();
    expect(stats.staging_count).toBe(4);
    expect(stats.canonical_count).toBe(2);

    await app.inspector.refresh();
    const counts = byTestId(root, "inspector-counts");
    expect(counts.getAttribute("data-staging")).toBe(String(stats.staging_count));
    expect(counts.getAttribute("data-canonical")).toBe(String(stats.canonical_count));
    expect(counts.textContent).toBe(
      `staging ${stats.staging_count} · canonical ${stats.canonical_count}`,
    );
    expect(allByTestId(root, "section-row")).toHaveLength(stats.staging_count);

    // the pre-aged fixture is already expired; the crossing one is not yet
    const crossed = sectionRow(root, "demo-expired");
    expect(crossed?.querySelector('[data-testid="expired-badge"]')?.textContent).toBe("EXPIRED");
    const crossing = sectionRow(root, "demo-crossing");
    expect(crossing).toBeTruthy();
    expect(crossing?.querySelector('[data-testid="expired-badge"]')).toBeNull();
  });

  it("shows the expired badge once the fixture crosses its TTL", async () => {
    const deadline = Date.now() + 20_000;
    let badge: Element | null = null;
    while (badge === null && Date.now() < deadline) {
      await app.inspector.refresh();
      badge = sectionRow(root, "demo-crossing")?.querySelector('[data-testid="expired-badge"]') ?? null;
      if (badge === null) await sleep(400);
    }
    expect(badge, "demo-crossing never expired").not.toBeNull();
    expect(badge?.textContent).toBe("EXPIRED");
  }, 30_000);

  it("chat round-trip renders the answer plus reference chips", async () => {
    await app.chat.send("What is mitosis in biology?");
    const answer = byTestId(root, "answer").textContent ?? "";
    expect(answer.length).toBeGreaterThan(0);
    expect(byTestId(root, "route-badge").textContent).toBe("factual");
    const chips = allByTestId(root, "ref-chip");
    expect(chips.length).toBeGreaterThanOrEqual(1);

    // a chip click pulls the cited section into the inspector detail pane
    chips[0].click();
    await sleep(100);
    const detail = byTestId(root, "detail-content").textContent ?? "";
    expect(detail.length).toBeGreaterThan(0);
  });

  it("consolidation button renders exactly the report the API returned", async () => {
    let captured: ConsolidationReport | null = null;
    const original = client.consolidate.bind(client);
    client.consolidate = async () => {
      captured = await original();
      return captured;
    };

    byTestId(root, "consolidate-button").click();
    const deadline = Date.now() + 10_000;
    while (root.querySelector('[data-testid="consolidation-report"]') === null) {
      if (Date.now() > deadline) throw new Error("consolidation report never rendered");
      await sleep(100);
    }

    expect(captured).not.toBeNull();
    const report = captured as unknown as ConsolidationReport;
    const list = byTestId(root, "consolidation-report");
    for (const field of REPORT_FIELDS) {
      const cell = list.querySelector(`[data-field="${field}"] dd`);
      expect(cell?.textContent, field).toBe(String(report[field]));
    }
    expect(report.staging_in).toBeGreaterThan(0);

    // afterRun refreshed the inspector; staging is drained on both sides
    const stats = await client.stats();
    expect(stats.staging_count).toBe(0);
    await app.inspector.refresh();
    expect(byTestId(root, "inspector-counts").getAttribute("data-staging")).toBe("0");
    expect(byTestId(root, "empty-state")).toBeTruthy();
  });

  it("stats bar mirrors /stats", async () => {
    const stats = await client.stats();
    await app.stats.refresh();
    expect(byTestId(root, "stat-staging").textContent).toBe(String(stats.staging_count));
    expect(byTestId(root, "stat-canonical").textContent).toBe(String(stats.canonical_count));
    expect(byTestId(root, "stat-teacher-calls").textContent).toBe(
      String(stats.teacher_calls_total),
    );
    expect(byTestId(root, "stat-queries").textContent).toBe(String(stats.queries));
    expect(byTestId(root, "stat-hit-rate").textContent).toBe(
      `${(stats.cache_hit_rate * 100).toFixed(1)}%`,
    );
    expect(app.stats.root.getAttribute("data-state")).toBe("online");
  });
});

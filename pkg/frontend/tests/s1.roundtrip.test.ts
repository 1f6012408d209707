/**
 * S1 round trip: the console's own client/session code against the real
 * annotation service backed by the mock LM demo dataset.
 */
import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { actionForKey } from "../src/keyboard";
import { Session } from "../src/state";
import type { AnnotationAction } from "../src/types";

const PYTHON = process.env.DIVGEN_PYTHON ?? "python3";
const PORT = 8500 + Math.floor(Math.random() * 400);
const BASE = `http://127.0.0.1:${PORT}`;

let dataDir: string;
let server: ChildProcess | null = null;

function runPython(code: string, args: string[]): Promise<void> {
  return new Promise((resolve, reject) => {
    const proc = spawn(PYTHON, ["-c", code, ...args], { stdio: "inherit" });
    proc.on("exit", (code_) => (code_ === 0 ? resolve() : reject(new Error(`python exited ${code_}`))));
    proc.on("error", reject);
  });
}

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 60_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/tasks`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("annotation service did not come up");
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "divgen-s1-"));
  await runPython(
    `
import sys
from divgen.demo import materialize_demo, build_mock_backend
from divgen.pipeline import load_task, run_generation
directory = sys.argv[1]
task_path = materialize_demo(directory)
task = load_task(task_path)
task.target_count = 80
run_generation(task, build_mock_backend(task), rng_seed=2,
               out_path=f"{directory}/demo-emotions.ndjson")
`,
    [dataDir],
  );
  server = spawn(
    PYTHON,
    [
      "-c",
      `
import sys, uvicorn
from divgen.service import create_app
app = create_app(sys.argv[1], seed=1, sync_jobs=True)
uvicorn.run(app, host="127.0.0.1", port=int(sys.argv[2]), log_level="warning")
`,
      dataDir,
      String(PORT),
    ],
    { stdio: "inherit" },
  );
  await waitForServer();
});

afterAll(() => {
  server?.kill();
});

describe("S1: console round trip against the mock-backed service", () => {
  it("10 scripted keyboard actions become exactly 10 events", async () => {
    const api = new ApiClient(BASE);
    const session = new Session(api, "s1-tester");
    const [task] = await api.listTasks();
    expect(task.n_instances).toBe(80);
    await session.selectTask(task);

    const script = ["1", "2", "o", "Enter", "1", "Enter", "o", "3", "4", "Enter"];
    for (const key of script) {
      const action = actionForKey(key, task.labels) as AnnotationAction;
      expect(action).not.toBeNull();
      const ok = await session.act(action);
      expect(ok).toBe(true);
    }
    expect(session.acknowledgedActions).toBe(10);
    expect(session.pendingActions).toBe(0);

    const metrics = await api.metrics(task.task);
    expect(metrics.n_events).toBe(10);
    expect(metrics.state_version).toBe(10);

    const logLines = readFileSync(join(dataDir, "demo-emotions.events.ndjson"), "utf-8")
      .split("\n")
      .filter((line) => line.trim().length > 0);
    expect(logLines).toHaveLength(10);
    expect(logLines.map((line) => JSON.parse(line).event_id)).toEqual([
      1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
    ]);
  });

  it("dashboard counts match GET /metrics", async () => {
    const api = new ApiClient(BASE);
    const session = new Session(api, "s1-tester");
    const [task] = await api.listTasks();
    await session.selectTask(task);

    const dashboardView = await session.refreshMetrics();
    const direct = await api.metrics(task.task);
    expect(dashboardView).toEqual(direct);
    expect(direct.inspected_count).toBe(10);
    expect(task.labels.every((label) => label in direct.per_label_counts)).toBe(true);
  });

  it("relabel changes only label-dependent report fields", async () => {
    const api = new ApiClient(BASE);
    const session = new Session(api, "s1-tester");
    const [task] = await api.listTasks();
    await session.selectTask(task);

    const before = await api.metrics(task.task);
    const card = session.currentCard!;
    const newLabel = task.labels.find((label) => label !== card.current_label)!;
    const ok = await session.act({ action: "relabel", label: newLabel });
    expect(ok).toBe(true);
    const after = await api.metrics(task.task);

    expect(after.diversity).toBe(before.diversity); // text-derived: unchanged
    expect(after.n_instances).toBe(before.n_instances);
    expect(after.per_label_counts).not.toEqual(before.per_label_counts);
    expect(after.per_label_counts[newLabel]).toBe((before.per_label_counts[newLabel] ?? 0) + 1);
    expect(after.n_events).toBe(before.n_events + 1);
    expect(after.inspected_count).toBe(before.inspected_count + 1);
  });
});

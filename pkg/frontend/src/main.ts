import { ApiClient } from "./api";
import { renderCard, renderDashboard } from "./card";
import { actionForKey, shortcutLegend } from "./keyboard";
import { Session } from "./state";
import type { ProxyStatus } from "./types";

const POLL_INTERVAL_MS = 1000; // dashboard refresh cap: one poll per second

const api = new ApiClient((window as { DIVGEN_API?: string }).DIVGEN_API ?? "");
const session = new Session(api);

const el = {
  taskPicker: document.getElementById("task-picker") as HTMLSelectElement,
  card: document.getElementById("card")!,
  legend: document.getElementById("legend")!,
  progress: document.getElementById("progress")!,
  error: document.getElementById("error-banner")!,
  dashboard: document.getElementById("dashboard")!,
  retrain: document.getElementById("retrain") as HTMLButtonElement,
  exports: document.getElementById("exports")!,
};

let proxyStatus: ProxyStatus | null = null;
let stale = false;

function renderReview(): void {
  const task = session.task;
  if (!task) {
    el.card.innerHTML = '<p class="muted">select a task</p>';
    return;
  }
  const card = session.currentCard;
  el.legend.textContent = shortcutLegend(task.labels).join("   ");
  el.progress.textContent = `${session.acknowledgedActions} annotated · ${session.remaining} in queue`;
  el.error.textContent = session.lastError ?? "";
  el.error.classList.toggle("hidden", session.lastError === null);
  el.card.innerHTML = card
    ? renderCard(card, task.labels)
    : '<p class="muted">queue drained — nothing left to review</p>';
}

function renderMetrics(): void {
  el.dashboard.innerHTML = renderDashboard(session.lastMetrics, proxyStatus, stale);
}

async function pollDashboard(): Promise<void> {
  if (!session.task) return;
  try {
    await session.refreshMetrics();
    proxyStatus = await api.proxyStatus(session.task.task);
    stale = false;
  } catch {
    stale = true;
  }
  renderMetrics();
}

async function selectTask(key: string): Promise<void> {
  const tasks = await api.listTasks();
  const task = tasks.find((t) => t.task === key) ?? tasks[0];
  if (!task) return;
  await session.selectTask(task);
  el.exports.innerHTML = (["raw", "lr", "oosf"] as const)
    .map((v) => `<a href="${api.exportUrl(task.task, v)}" download>export ${v}</a>`)
    .join(" ");
  renderReview();
  await pollDashboard();
}

document.addEventListener("keydown", (event) => {
  if (!session.task || event.target instanceof HTMLSelectElement) return;
  const action = actionForKey(event.key, session.task.labels);
  if (!action) return;
  event.preventDefault();
  renderReview(); // show the optimistic state immediately
  void session.act(action).then(() => renderReview());
});

el.retrain.addEventListener("click", () => {
  if (!session.task) return;
  void api.retrainProxies(session.task.task).then(() => pollDashboard());
});

el.taskPicker.addEventListener("change", () => void selectTask(el.taskPicker.value));

async function start(): Promise<void> {
  const tasks = await api.listTasks();
  el.taskPicker.innerHTML = tasks
    .map((t) => `<option value="${t.task}">${t.task} (${t.n_instances})</option>`)
    .join("");
  if (tasks.length) await selectTask(tasks[0].task);
  setInterval(() => void pollDashboard(), POLL_INTERVAL_MS);
}

void start();

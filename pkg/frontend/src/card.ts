import type { InstanceCard, MetricsReport, ProxyStatus } from "./types";

const INSPECTION_MILESTONES = [90, 180, 270];

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

/** Render one review card: text, labels, provenance badge, score bars. */
export function renderCard(card: InstanceCard, labels: string[]): string {
  const bars = labels
    .map((label) => {
      const score = card.scores[label];
      const width = score === undefined ? 0 : Math.round(score * 100);
      const value = score === undefined ? "–" : score.toFixed(2);
      const highlight = label === card.current_label ? " bar-current" : "";
      return `<div class="score-row">
        <span class="score-label">${escapeHtml(label)}</span>
        <div class="score-track"><div class="score-bar${highlight}" style="width:${width}%"></div></div>
        <span class="score-value">${value}</span>
      </div>`;
    })
    .join("");
  const oos =
    card.oos_state === "out_of_scope"
      ? '<span class="badge badge-oos">out of scope</span>'
      : "";
  return `<blockquote class="card-text">${escapeHtml(card.text)}</blockquote>
    <div class="card-meta">
      <span class="badge badge-prov-${card.label_provenance}">${card.label_provenance}</span>
      <span class="badge">specified: ${escapeHtml(card.specified_label)}</span>
      <span class="badge badge-current">current: ${escapeHtml(card.current_label)}</span>
      ${oos}
    </div>
    <div class="score-bars">${bars}</div>`;
}

/** Inspection progress against the standard 90/180/270 milestones. */
export function milestoneProgress(inspected: number): { label: string; done: boolean }[] {
  return INSPECTION_MILESTONES.map((m) => ({
    label: `${Math.min(inspected, m)}/${m}`,
    done: inspected >= m,
  }));
}

export function renderDashboard(
  metrics: MetricsReport | null,
  proxyStatus: ProxyStatus | null,
  stale: boolean,
): string {
  if (!metrics) return '<p class="muted">no metrics yet</p>';
  const oosRatio = metrics.n_instances ? metrics.oos_flagged / metrics.n_instances : 0;
  const milestones = milestoneProgress(metrics.inspected_count)
    .map((m) => `<span class="milestone${m.done ? " done" : ""}">${m.label}</span>`)
    .join(" ");
  const counts = Object.entries(metrics.per_label_counts)
    .map(([label, count]) => `${escapeHtml(label)}: ${count}`)
    .join(" · ");
  const spinner =
    proxyStatus?.state === "running"
      ? '<span class="spinner" title="retraining"></span>'
      : proxyStatus?.state === "done"
        ? `trained on ${proxyStatus.summary?.n_labeled ?? "?"} (acc ${
            proxyStatus.summary ? proxyStatus.summary.training_accuracy.toFixed(2) : "?"
          })`
        : (proxyStatus?.state ?? "idle");
  return `${stale ? '<p class="stale">metrics may be stale (last poll failed)</p>' : ""}
    <dl>
      <dt>instances</dt><dd>${metrics.n_instances}</dd>
      <dt>diversity</dt><dd>${metrics.diversity === null ? "–" : metrics.diversity.toFixed(4)}</dd>
      <dt>label accuracy</dt><dd>${
        metrics.label_accuracy === null ? "–" : metrics.label_accuracy.toFixed(3)
      }</dd>
      <dt>OOS ratio</dt><dd>${(oosRatio * 100).toFixed(1)}%</dd>
      <dt>inspected</dt><dd>${metrics.inspected_count} ${milestones}</dd>
      <dt>events</dt><dd>${metrics.n_events}</dd>
      <dt>per label</dt><dd>${counts}</dd>
      <dt>proxies</dt><dd>${spinner}</dd>
    </dl>`;
}

import type {
  ClusterInfo,
  ClusterReport,
  Explanation,
  MetricsReport,
  SteerReportJson,
} from "./types.js";
import type { ConsoleState, ExclusionBadge } from "./state.js";

// Numbers are printed with String(): the shortest round-trip form of the
// exact double the API sent. No rounding, no recomputation.
export function num(x: number | null): string {
  return x === null ? "n/a" : String(x);
}

export function escapeHtml(s: string): string {
  return s
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function renderExplanation(e: Explanation): string {
  const rule =
    e.atoms.length === 0
      ? '<span class="null-rule">(empty rule: prior confidence)</span>'
      : e.atoms.map((a) => `<span class="atom">${escapeHtml(a)}</span>`).join(" AND ");
  const dist = e.distribution.map(num).join(", ");
  return [
    `<div class="rule">${rule}</div>`,
    '<table class="kv">',
    `<tr><th>prediction</th><td>${escapeHtml(e.predicted_label)} (class ${e.predicted_class})</td></tr>`,
    `<tr><th>confidence</th><td>${num(e.confidence)}</td></tr>`,
    `<tr><th>distribution</th><td>[${dist}]</td></tr>`,
    `<tr><th>coverage</th><td>${num(e.coverage_n)} instances (${num(e.coverage_pct)}%)</td></tr>`,
    `<tr><th>null slots</th><td>${num(e.null_count)}</td></tr>`,
    "</table>",
  ].join("\n");
}

export function renderComparison(
  before: Explanation | null,
  after: Explanation | null,
): string {
  if (before === null || after === null) {
    return '<p class="hint">Exclude an atom, then re-explain the same instance to compare.</p>';
  }
  return [
    '<div class="compare">',
    `<div class="pane"><h4>before</h4>${renderExplanation(before)}</div>`,
    `<div class="pane"><h4>after</h4>${renderExplanation(after)}</div>`,
    "</div>",
  ].join("\n");
}

// Column order mirrors the ClusterInfo wire fields one to one.
export const CLUSTER_COLUMNS: (keyof ClusterInfo)[] = [
  "cluster_id",
  "size",
  "pct",
  "accuracy",
  "majority_label",
  "majority_ratio",
  "mean_len",
  "top_atoms",
];

function clusterCell(info: ClusterInfo, col: keyof ClusterInfo): string {
  const v = info[col];
  if (col === "top_atoms") {
    return (v as [string, number][])
      .map(([atom, count]) => `${escapeHtml(atom)} (${num(count)})`)
      .join("; ");
  }
  return typeof v === "number" ? num(v) : escapeHtml(String(v));
}

/** Size-weighted mean accuracy; clusters below it get the low-accuracy flag. */
export function lowAccuracyThreshold(report: ClusterReport): number {
  let weighted = 0;
  for (const c of report.clusters) weighted += c.accuracy * c.size;
  return report.total > 0 ? weighted / report.total : 0;
}

export function renderClusterTable(report: ClusterReport): string {
  const threshold = lowAccuracyThreshold(report);
  const head = CLUSTER_COLUMNS.map((c) => `<th>${c}</th>`).join("");
  const rows = report.clusters.map((info) => {
    const flagged = info.accuracy < threshold ? ' class="low-accuracy"' : "";
    const cells = CLUSTER_COLUMNS.map(
      (c) => `<td>${clusterCell(info, c)}</td>`,
    ).join("");
    return `<tr data-cluster="${info.cluster_id}"${flagged}>${cells}</tr>`;
  });
  return [
    `<table class="clusters"><thead><tr>${head}</tr></thead>`,
    `<tbody>${rows.join("\n")}</tbody></table>`,
  ].join("\n");
}

/** Sorted bar list of replacement atoms, widths relative to the top count. */
export function renderHistogram(hist: [string, number][]): string {
  if (hist.length === 0) return '<p class="hint">No replacements yet.</p>';
  const sorted = [...hist].sort((a, b) => b[1] - a[1]);
  const top = sorted[0][1];
  const bars = sorted.map(([atom, count]) => {
    const width = top > 0 ? (100 * count) / top : 0;
    return [
      '<div class="bar-row">',
      `<span class="bar-label">${escapeHtml(atom)}</span>`,
      `<span class="bar" style="width:${width}%"></span>`,
      `<span class="bar-count">${num(count)}</span>`,
      "</div>",
    ].join("");
  });
  return `<div class="histogram">${bars.join("\n")}</div>`;
}

export function renderBadges(badges: ExclusionBadge[]): string {
  if (badges.length === 0) return '<p class="hint">No atoms excluded.</p>';
  const items = badges.map((b) => {
    const deltas = Object.entries(b.accuracyDelta)
      .map(([split, d]) => `${escapeHtml(split)} ${d === null ? "n/a" : num(d)}`)
      .join(" / ");
    const counts = Object.entries(b.affectedCounts)
      .map(([split, n]) => `${escapeHtml(split)} ${num(n)}`)
      .join(" / ");
    return [
      `<li class="badge" data-atom="${b.id}">`,
      `<span class="badge-name">${escapeHtml(b.display)}</span>`,
      `<span class="badge-delta">accuracy delta: ${deltas}</span>`,
      `<span class="badge-affected">affected: ${counts}</span>`,
      "</li>",
    ].join(" ");
  });
  return `<ul class="badges">${items.join("\n")}</ul>`;
}

export function renderSteerReport(report: SteerReportJson | null): string {
  if (report === null) return '<p class="hint">No steering step applied.</p>';
  const splits = Object.keys(report.affected_counts);
  const rows = splits.map((s) =>
    [
      `<tr><th>${escapeHtml(s)}</th>`,
      `<td>${num(report.affected_counts[s])}</td>`,
      `<td>${num(report.accuracy_before[s])}</td>`,
      `<td>${num(report.accuracy_after[s])}</td></tr>`,
    ].join(""),
  );
  return [
    '<table class="kv"><thead>',
    "<tr><th>split</th><th>affected</th><th>accuracy before</th><th>accuracy after</th></tr>",
    `</thead><tbody>${rows.join("\n")}</tbody></table>`,
    `<h4>replacement atoms</h4>${renderHistogram(report.replacement_histogram)}`,
  ].join("\n");
}

export function renderMetrics(m: MetricsReport): string {
  return [
    '<span class="metric">model: ' + escapeHtml(m.model) + "</span>",
    `<span class="metric">PR-AUC: ${m.pr_auc === null ? "n/a" : num(m.pr_auc)}</span>`,
    `<span class="metric">F1: ${num(m.f1)}</span>`,
    `<span class="metric">accuracy: ${num(m.accuracy)}</span>`,
  ].join(" ");
}

export function renderError(code: string, message: string): string {
  return [
    '<div class="error-banner">',
    `<strong>${escapeHtml(code)}</strong> ${escapeHtml(message)}`,
    '<button id="retry-btn" type="button">Retry</button>',
    "</div>",
  ].join(" ");
}

export function renderSessionLine(state: ConsoleState): string {
  const sid = state.sessionId === null ? "none" : state.sessionId;
  return `session: ${escapeHtml(sid)} | exclusions version: ${num(state.exclusionsVersion)}`;
}

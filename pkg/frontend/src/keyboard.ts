import type { AnnotationAction } from "./types";

/**
 * Keyboard-first review mapping: digit k relabels to the k-th task label,
 * "o" flags out-of-scope, Enter confirms the current label as-is.
 * Returns null for keys that are not review actions.
 */
export function actionForKey(key: string, labels: string[]): AnnotationAction | null {
  if (key === "Enter") return { action: "confirm" };
  if (key === "o" || key === "O") return { action: "mark_oos" };
  if (/^[1-9]$/.test(key)) {
    const index = Number(key) - 1;
    if (index < labels.length) return { action: "relabel", label: labels[index] };
  }
  return null;
}

export function shortcutLegend(labels: string[]): string[] {
  const legend = labels.map((label, i) => `${i + 1} = ${label}`);
  legend.push("o = out of scope", "Enter = confirm");
  return legend;
}

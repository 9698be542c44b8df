/**
 * Side-by-side run comparison: two history entries rendered next to each
 * other with per-metric deltas when both carry ground-truth metrics.
 */
import { HistoryEntry, MissingEntryError } from "./session.js";
import { RenderedOverlays, renderOverlays } from "./overlay.js";

export interface MetricDeltas {
  iou: number;
  dsc: number;
  auc?: number;
}

export interface Comparison {
  a: { entry: HistoryEntry; overlays: RenderedOverlays };
  b: { entry: HistoryEntry; overlays: RenderedOverlays };
  /** b minus a; undefined when either entry lacks metrics */
  deltas?: MetricDeltas;
  masksIdentical: boolean;
}

function sameBytes(x: Uint8Array, y: Uint8Array): boolean {
  if (x.length !== y.length) return false;
  for (let i = 0; i < x.length; i++) if (x[i] !== y[i]) return false;
  return true;
}

export function compareRuns(
  history: readonly HistoryEntry[],
  idA: number,
  idB: number,
): Comparison {
  const a = history.find((e) => e.id === idA);
  if (!a) throw new MissingEntryError(idA);
  const b = history.find((e) => e.id === idB);
  if (!b) throw new MissingEntryError(idB);
  const overlaysA = renderOverlays(a.response);
  const overlaysB = renderOverlays(b.response);
  let deltas: MetricDeltas | undefined;
  if (a.metrics && b.metrics) {
    deltas = { iou: b.metrics.iou - a.metrics.iou, dsc: b.metrics.dsc - a.metrics.dsc };
    if (a.metrics.auc !== undefined && b.metrics.auc !== undefined) {
      deltas.auc = b.metrics.auc - a.metrics.auc;
    }
  }
  return {
    a: { entry: a, overlays: overlaysA },
    b: { entry: b, overlays: overlaysB },
    deltas,
    masksIdentical: sameBytes(overlaysA.maskPng, overlaysB.maskPng),
  };
}

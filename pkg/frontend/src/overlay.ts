/**
 * Overlay rendering: the server's payloads become toggleable RGBA layers.
 *
 * Opacity and the saliency threshold slider are applied client-side for
 * exploration only; stored results always reflect the server's own
 * thresholding.
 */
import { Box, SegmentResponse, b64ToBytes } from "./api.js";
import { FloatGrid, parseNpyFloat32 } from "./npy.js";

export type LayerName = "saliency" | "boxes" | "mask" | "gt";

export interface RgbaLayer {
  name: LayerName;
  width: number;
  height: number;
  pixels: Uint8ClampedArray; // RGBA, row-major
}

export interface OverlaySettings {
  saliencyOpacity: number; // [0, 1]
  saliencyThreshold: number; // [0, 1]; values below render transparent
  visible: Record<LayerName, boolean>;
}

export const DEFAULT_SETTINGS: OverlaySettings = {
  saliencyOpacity: 0.6,
  saliencyThreshold: 0.0,
  visible: { saliency: true, boxes: true, mask: true, gt: false },
};

/** Warm colormap: black -> red -> yellow, like the usual CAM rendering. */
function heatColor(v: number): [number, number, number] {
  const r = Math.min(1, 2 * v);
  const g = Math.max(0, 2 * v - 1);
  return [Math.round(255 * r), Math.round(255 * g), 0];
}

export function saliencyLayer(grid: FloatGrid, settings: OverlaySettings): RgbaLayer {
  const pixels = new Uint8ClampedArray(grid.width * grid.height * 4);
  const alpha = Math.round(255 * settings.saliencyOpacity);
  for (let i = 0; i < grid.data.length; i++) {
    const v = grid.data[i]!;
    if (v < settings.saliencyThreshold) continue; // stays transparent
    const [r, g, b] = heatColor(v);
    pixels[4 * i] = r;
    pixels[4 * i + 1] = g;
    pixels[4 * i + 2] = b;
    pixels[4 * i + 3] = alpha;
  }
  return { name: "saliency", width: grid.width, height: grid.height, pixels };
}

export function boxesLayer(boxes: Box[], width: number, height: number): RgbaLayer {
  const pixels = new Uint8ClampedArray(width * height * 4);
  const put = (x: number, y: number) => {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const i = 4 * (y * width + x);
    pixels[i] = 0;
    pixels[i + 1] = 200;
    pixels[i + 2] = 255;
    pixels[i + 3] = 255;
  };
  for (const [xmin, ymin, xmax, ymax] of boxes) {
    for (let x = xmin; x <= xmax; x++) {
      put(x, ymin);
      put(x, ymax);
    }
    for (let y = ymin; y <= ymax; y++) {
      put(xmin, y);
      put(xmax, y);
    }
  }
  return { name: "boxes", width, height, pixels };
}

export interface RenderedOverlays {
  /** Exact PNG bytes from the server; drawn via an <img> blob, never re-encoded. */
  maskPng: Uint8Array;
  heatmapPng: Uint8Array;
  saliency: FloatGrid;
  saliencyLayer: RgbaLayer;
  boxesLayer: RgbaLayer;
  boxes: Box[];
}

export function renderOverlays(
  response: SegmentResponse,
  settings: OverlaySettings = DEFAULT_SETTINGS,
): RenderedOverlays {
  const saliency = parseNpyFloat32(b64ToBytes(response.saliency_npy_b64));
  return {
    maskPng: b64ToBytes(response.mask_png_b64),
    heatmapPng: b64ToBytes(response.heatmap_png_b64),
    saliency,
    saliencyLayer: saliencyLayer(saliency, settings),
    boxesLayer: boxesLayer(response.boxes, saliency.width, saliency.height),
    boxes: response.boxes,
  };
}

/** DOM wiring for the workbench page (index.html). */
import { ApiClient, ApiError, bytesToB64 } from "./api.js";
import { compareRuns } from "./compare.js";
import { RgbaLayer } from "./overlay.js";
import { EmptyPromptError, NoImageError, SessionState } from "./session.js";

export { ApiClient, SessionState, compareRuns };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function drawLayer(canvas: HTMLCanvasElement, layer: RgbaLayer): void {
  canvas.width = layer.width;
  canvas.height = layer.height;
  const ctx = canvas.getContext("2d")!;
  const pixels = layer.pixels as Uint8ClampedArray<ArrayBuffer>;
  ctx.putImageData(new ImageData(pixels, layer.width, layer.height), 0, 0);
}

async function drawPng(canvas: HTMLCanvasElement, png: Uint8Array): Promise<void> {
  const bitmap = await createImageBitmap(
    new Blob([png as Uint8Array<ArrayBuffer>], { type: "image/png" }),
  );
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  canvas.getContext("2d")!.drawImage(bitmap, 0, 0);
}

export function mount(): void {
  const session = new SessionState(new ApiClient(""));
  const status = el<HTMLElement>("status");
  const historyList = el<HTMLUListElement>("history");

  el<HTMLInputElement>("image-input").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    session.loadImage(bytesToB64(bytes));
    status.textContent = `loaded ${file.name}`;
  });

  el<HTMLButtonElement>("submit").addEventListener("click", async () => {
    const prompt = el<HTMLInputElement>("prompt").value;
    const params = {
      method: el<HTMLSelectElement>("method").value as "gscorecam" | "gradcam",
      top_k: parseInt(el<HTMLInputElement>("top-k").value, 10),
    };
    try {
      const { entry, overlays } = await session.submitPrompt(prompt, params);
      await drawPng(el<HTMLCanvasElement>("mask-canvas"), overlays.maskPng);
      drawLayer(el<HTMLCanvasElement>("saliency-canvas"), overlays.saliencyLayer);
      drawLayer(el<HTMLCanvasElement>("boxes-canvas"), overlays.boxesLayer);
      const item = document.createElement("li");
      item.textContent = `#${entry.id} ${entry.prompt} (${params.method})`
        + (entry.metrics ? ` IoU ${entry.metrics.iou.toFixed(3)}` : "");
      historyList.appendChild(item);
      status.textContent = "";
    } catch (err) {
      if (err instanceof EmptyPromptError || err instanceof NoImageError) {
        status.textContent = err.message; // inline validation, no API call
      } else if (err instanceof ApiError) {
        status.textContent = `${err.code}: ${err.message}`; // surfaced verbatim
      } else {
        throw err;
      }
    }
  });

  el<HTMLButtonElement>("export").addEventListener("click", () => {
    const blob = new Blob([session.exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "session.json";
    a.click();
  });

  el<HTMLButtonElement>("compare").addEventListener("click", () => {
    const idA = parseInt(el<HTMLInputElement>("compare-a").value, 10);
    const idB = parseInt(el<HTMLInputElement>("compare-b").value, 10);
    const cmp = compareRuns(session.getHistory(), idA, idB);
    void drawPng(el<HTMLCanvasElement>("compare-canvas-a"), cmp.a.overlays.maskPng);
    void drawPng(el<HTMLCanvasElement>("compare-canvas-b"), cmp.b.overlays.maskPng);
    status.textContent = cmp.deltas
      ? `ΔIoU ${cmp.deltas.iou.toFixed(3)}  ΔDSC ${cmp.deltas.dsc.toFixed(3)}`
      : cmp.masksIdentical
        ? "masks identical"
        : "masks differ (no metrics to compare)";
  });
}

if (typeof document !== "undefined" && document.getElementById("submit")) {
  mount();
}

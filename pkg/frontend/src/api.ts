/**
 * Typed client for the segmentation HTTP API. All pipeline math lives on the
 * server; this module only validates and transports payloads.
 */
import { z } from "zod";

export const BoxSchema = z.tuple([z.number(), z.number(), z.number(), z.number()]);

export const MetricsSchema = z.object({
  iou: z.number(),
  dsc: z.number(),
  auc: z.number().optional(),
});

export const SegmentResponseSchema = z.object({
  saliency_npy_b64: z.string(),
  heatmap_png_b64: z.string(),
  boxes: z.array(BoxSchema),
  mask_png_b64: z.string(),
  provenance: z.record(z.unknown()),
  timings: z.record(z.number()),
  metrics: MetricsSchema.optional(),
});

export type Box = z.infer<typeof BoxSchema>;
export type Metrics = z.infer<typeof MetricsSchema>;
export type SegmentResponse = z.infer<typeof SegmentResponseSchema>;

export interface SegmentParams {
  method?: "gscorecam" | "gradcam";
  top_k?: number;
  multi_box?: boolean;
  min_area_fraction?: number;
  [key: string]: unknown;
}

export interface SegmentRequest {
  image_b64: string;
  prompt: string;
  gt_b64?: string;
  params?: SegmentParams;
}

/** Server-side failure; `code` is the API's stable error identifier. */
export class ApiError extends Error {
  constructor(public readonly code: string, message: string, public readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async segment(request: SegmentRequest): Promise<SegmentResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/segment`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(String(body.error ?? "Unknown"), String(body.message ?? ""), resp.status);
    }
    return SegmentResponseSchema.parse(body);
  }
}

export function b64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function bytesToB64(bytes: Uint8Array): string {
  let bin = "";
  for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]!);
  return btoa(bin);
}

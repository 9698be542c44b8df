/** Minimal .npy reader for the float32 saliency arrays the API returns. */

export interface FloatGrid {
  height: number;
  width: number;
  data: Float32Array;
}

export function parseNpyFloat32(bytes: Uint8Array): FloatGrid {
  const magic = String.fromCharCode(...bytes.subarray(0, 6));
  if (magic !== "\x93NUMPY") throw new Error("not an npy payload");
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const major = bytes[6]!;
  const headerLen = major >= 2 ? view.getUint32(8, true) : view.getUint16(8, true);
  const headerStart = major >= 2 ? 12 : 10;
  const header = new TextDecoder("latin1").decode(
    bytes.subarray(headerStart, headerStart + headerLen),
  );
  if (!header.includes("'<f4'")) throw new Error(`unsupported dtype in ${header}`);
  if (!header.includes("'fortran_order': False")) throw new Error("fortran order unsupported");
  const shapeMatch = header.match(/'shape':\s*\((\d+),\s*(\d+)\)/);
  if (!shapeMatch) throw new Error(`cannot parse shape from ${header}`);
  const height = parseInt(shapeMatch[1]!, 10);
  const width = parseInt(shapeMatch[2]!, 10);
  const dataStart = headerStart + headerLen;
  const expected = height * width * 4;
  if (bytes.length - dataStart < expected) throw new Error("truncated npy payload");
  // copy so alignment is guaranteed regardless of the source buffer offset
  const raw = bytes.slice(dataStart, dataStart + expected);
  return { height, width, data: new Float32Array(raw.buffer) };
}

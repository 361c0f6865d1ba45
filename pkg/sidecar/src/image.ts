/**
 * Minimal raster support: binary PPM (P6) read/write, grayscale conversion,
 * and bilinear warping with border replication. PPM keeps the sidecar free
 * of native image decoders while staying viewable with standard tools.
 */
import * as fs from "fs";

import { CROP_SIZE, SimilarityTransform, invertTransform } from "./geometry";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB, 3 bytes per pixel. */
  data: Uint8Array;
}

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major luminance in [0, 1]. */
  data: Float64Array;
}

export class ImageFormatError extends Error {}

export function writePpm(path: string, image: RgbImage): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  fs.writeFileSync(path, Buffer.concat([header, Buffer.from(image.data)]));
}

export function readPpm(path: string): RgbImage {
  const raw = fs.readFileSync(path);
  if (raw.length < 2 || raw.toString("ascii", 0, 2) !== "P6") {
    throw new ImageFormatError(`${path}: not a binary PPM (P6) file`);
  }
  // Header: magic, width, height, maxval, separated by whitespace/comments.
  const fields: number[] = [];
  let off = 2;
  while (fields.length < 3) {
    while (off < raw.length && /\s/.test(String.fromCharCode(raw[off]))) off++;
    if (raw[off] === 0x23) {
      // comment line
      while (off < raw.length && raw[off] !== 0x0a) off++;
      continue;
    }
    let start = off;
    while (off < raw.length && !/\s/.test(String.fromCharCode(raw[off]))) off++;
    const token = raw.toString("ascii", start, off);
    const value = Number(token);
    if (!Number.isFinite(value)) {
      throw new ImageFormatError(`${path}: bad header token ${JSON.stringify(token)}`);
    }
    fields.push(value);
  }
  off++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) {
    throw new ImageFormatError(`${path}: only maxval 255 is supported, got ${maxval}`);
  }
  const need = width * height * 3;
  if (raw.length - off < need) {
    throw new ImageFormatError(`${path}: truncated pixel data`);
  }
  return { width, height, data: new Uint8Array(raw.subarray(off, off + need)) };
}

export function toGray(image: RgbImage): GrayImage {
  const out = new Float64Array(image.width * image.height);
  for (let i = 0; i < out.length; i++) {
    const r = image.data[3 * i];
    const g = image.data[3 * i + 1];
    const b = image.data[3 * i + 2];
    out[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255;
  }
  return { width: image.width, height: image.height, data: out };
}

function clampIndex(v: number, max: number): number {
  return v < 0 ? 0 : v > max ? max : v;
}

/** Bilinear sample with border replication; flags out-of-bounds reads. */
export function sampleBilinear(
  image: GrayImage,
  x: number,
  y: number,
  flags: { outOfBounds: boolean },
): number {
  if (x < 0 || y < 0 || x > image.width - 1 || y > image.height - 1) {
    flags.outOfBounds = true;
  }
  const x0 = clampIndex(Math.floor(x), image.width - 1);
  const y0 = clampIndex(Math.floor(y), image.height - 1);
  const x1 = clampIndex(x0 + 1, image.width - 1);
  const y1 = clampIndex(y0 + 1, image.height - 1);
  const fx = Math.min(Math.max(x - x0, 0), 1);
  const fy = Math.min(Math.max(y - y0, 0), 1);
  const top = image.data[y0 * image.width + x0] * (1 - fx) + image.data[y0 * image.width + x1] * fx;
  const bot = image.data[y1 * image.width + x0] * (1 - fx) + image.data[y1 * image.width + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

export interface CropResult {
  crop: GrayImage;
  /** True when any sample fell outside the image and was border-replicated. */
  outOfBounds: boolean;
}

/**
 * Warp a crop of `size` x `size` pixels out of the image. The transform maps
 * image coordinates onto crop coordinates (the alignment convention), so
 * rendering walks the inverse mapping.
 */
export function warpCrop(
  image: GrayImage,
  transform: SimilarityTransform,
  size: number = CROP_SIZE,
): CropResult {
  const inv = invertTransform(transform);
  const out = new Float64Array(size * size);
  const flags = { outOfBounds: false };
  for (let v = 0; v < size; v++) {
    for (let u = 0; u < size; u++) {
      const sx = inv.matrix[0][0] * u + inv.matrix[0][1] * v + inv.translation[0];
      const sy = inv.matrix[1][0] * u + inv.matrix[1][1] * v + inv.translation[1];
      out[v * size + u] = sampleBilinear(image, sx, sy, flags);
    }
  }
  return { crop: { width: size, height: size, data: out }, outOfBounds: flags.outOfBounds };
}

/**
 * Deterministic linear embedding backends. A backend is a seeded random
 * projection from 16x16 block-averaged crop features to a unit vector; the
 * weights live in a small binary model file so runs are reproducible offline
 * and no inference framework is required. Any model with a 5-point aligner
 * and a fixed-dimension output can occupy a backend slot.
 */
import * as fs from "fs";

import { CROP_SIZE } from "./geometry";
import { GrayImage } from "./image";

export const MODEL_MAGIC = "MIDW";
export const FEATURE_GRID = 16;
export const FEATURE_COUNT = FEATURE_GRID * FEATURE_GRID;
export const DEFAULT_DIM = 512;

export class ModelError extends Error {}

/** Deterministic 32-bit PRNG (mulberry32); good enough for weight init. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export interface EmbedderSpec {
  backendId: string;
  dim: number;
  seed: number;
}

export class LinearEmbedder {
  readonly backendId: string;
  readonly dim: number;
  /** Row-major (dim x FEATURE_COUNT). */
  readonly weights: Float64Array;

  constructor(backendId: string, dim: number, weights: Float64Array) {
    if (weights.length !== dim * FEATURE_COUNT) {
      throw new ModelError(
        `backend ${backendId}: expected ${dim * FEATURE_COUNT} weights, got ${weights.length}`,
      );
    }
    this.backendId = backendId;
    this.dim = dim;
    this.weights = weights;
  }

  static fromSeed(spec: EmbedderSpec): LinearEmbedder {
    const rand = mulberry32(spec.seed);
    const weights = new Float64Array(spec.dim * FEATURE_COUNT);
    for (let i = 0; i < weights.length; i++) {
      // Box-Muller for roughly Gaussian weights
      const u = Math.max(rand(), 1e-12);
      const v = rand();
      weights[i] = Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
    }
    return new LinearEmbedder(spec.backendId, spec.dim, weights);
  }

  /** 16x16 block means of a 112x112 crop, centered on their mean. */
  features(crop: GrayImage): Float64Array {
    if (crop.width !== CROP_SIZE || crop.height !== CROP_SIZE) {
      throw new ModelError(
        `backend ${this.backendId}: crop must be ${CROP_SIZE}x${CROP_SIZE}, ` +
          `got ${crop.width}x${crop.height}`,
      );
    }
    const block = CROP_SIZE / FEATURE_GRID; // 7
    const out = new Float64Array(FEATURE_COUNT);
    for (let by = 0; by < FEATURE_GRID; by++) {
      for (let bx = 0; bx < FEATURE_GRID; bx++) {
        let acc = 0;
        for (let y = by * block; y < (by + 1) * block; y++) {
          for (let x = bx * block; x < (bx + 1) * block; x++) {
            acc += crop.data[y * CROP_SIZE + x];
          }
        }
        out[by * FEATURE_GRID + bx] = acc / (block * block);
      }
    }
    let mean = 0;
    for (const v of out) mean += v;
    mean /= FEATURE_COUNT;
    for (let i = 0; i < FEATURE_COUNT; i++) out[i] -= mean;
    return out;
  }

  embed(crop: GrayImage): Float32Array {
    const feats = this.features(crop);
    const raw = new Float64Array(this.dim);
    for (let d = 0; d < this.dim; d++) {
      let acc = 0;
      const base = d * FEATURE_COUNT;
      for (let i = 0; i < FEATURE_COUNT; i++) {
        acc += this.weights[base + i] * feats[i];
      }
      raw[d] = acc;
    }
    let norm = 0;
    for (const v of raw) norm += v * v;
    norm = Math.sqrt(norm);
    if (norm < 1e-12) {
      // featureless crop (uniform luminance): fall back to a fixed axis so
      // the output is still a valid unit vector
      raw.fill(0);
      raw[0] = 1;
      norm = 1;
    }
    const out = new Float32Array(this.dim);
    for (let d = 0; d < this.dim; d++) out[d] = raw[d] / norm;
    return out;
  }
}

export function saveModel(path: string, embedder: LinearEmbedder): void {
  const idBytes = Buffer.from(embedder.backendId, "utf-8");
  const header = Buffer.alloc(4 + 4 + idBytes.length + 4 + 4);
  let off = 0;
  header.write(MODEL_MAGIC, off, "ascii");
  off += 4;
  header.writeUInt32LE(idBytes.length, off);
  off += 4;
  idBytes.copy(header, off);
  off += idBytes.length;
  header.writeUInt32LE(embedder.dim, off);
  off += 4;
  header.writeUInt32LE(FEATURE_COUNT, off);
  const body = Buffer.alloc(embedder.weights.length * 4);
  for (let i = 0; i < embedder.weights.length; i++) {
    body.writeFloatLE(Math.fround(embedder.weights[i]), i * 4);
  }
  fs.writeFileSync(path, Buffer.concat([header, body]));
}

export function loadModel(path: string): LinearEmbedder {
  const raw = fs.readFileSync(path);
  if (raw.toString("ascii", 0, 4) !== MODEL_MAGIC) {
    throw new ModelError(`${path}: not a sidecar model file`);
  }
  let off = 4;
  const idLen = raw.readUInt32LE(off);
  off += 4;
  const backendId = raw.toString("utf-8", off, off + idLen);
  off += idLen;
  const dim = raw.readUInt32LE(off);
  off += 4;
  const featureCount = raw.readUInt32LE(off);
  off += 4;
  if (featureCount !== FEATURE_COUNT) {
    throw new ModelError(`${path}: feature count ${featureCount} != ${FEATURE_COUNT}`);
  }
  const weights = new Float64Array(dim * featureCount);
  for (let i = 0; i < weights.length; i++) {
    weights[i] = raw.readFloatLE(off + i * 4);
  }
  return new LinearEmbedder(backendId, dim, weights);
}

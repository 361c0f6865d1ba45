/**
 * Writer for the primary engine's interchange pair: the MIDE binary blob
 * (magic, version, per-backend length-prefixed id + dimension + row count +
 * row-major float32 LE matrix) and the JSON manifest keyed by face_id.
 */
import * as fs from "fs";

export const BLOB_MAGIC = "MIDE";
export const BLOB_VERSION = 1;
export const MANIFEST_VERSION = 1;

export interface BackendMatrix {
  dim: number;
  /** Concatenated rows, length = rowCount * dim. */
  data: Float32Array;
}

export interface ManifestFace {
  face_id: string;
  image_id: string;
  bbox: [number, number, number, number];
  rows: Record<string, number>;
  landmarks?: number[][];
  quality?: number;
  identity_id?: string;
}

export function writeBlob(path: string, matrices: Map<string, BackendMatrix>): void {
  const chunks: Buffer[] = [];
  const head = Buffer.alloc(12);
  head.write(BLOB_MAGIC, 0, "ascii");
  head.writeUInt32LE(BLOB_VERSION, 4);
  head.writeUInt32LE(matrices.size, 8);
  chunks.push(head);
  for (const [backendId, mat] of matrices) {
    const idBytes = Buffer.from(backendId, "utf-8");
    const rows = mat.data.length / mat.dim;
    if (!Number.isInteger(rows)) {
      throw new Error(`backend ${backendId}: data length not a multiple of dim`);
    }
    const meta = Buffer.alloc(4 + idBytes.length + 4 + 8);
    let off = 0;
    meta.writeUInt32LE(idBytes.length, off);
    off += 4;
    idBytes.copy(meta, off);
    off += idBytes.length;
    meta.writeUInt32LE(mat.dim, off);
    off += 4;
    meta.writeBigUInt64LE(BigInt(rows), off);
    chunks.push(meta);
    chunks.push(Buffer.from(mat.data.buffer.slice(mat.data.byteOffset,
      mat.data.byteOffset + mat.data.byteLength)));
  }
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export interface ManifestInput {
  corpusId: string;
  split: string;
  backends: Map<string, BackendMatrix>;
  imageIds: string[];
  faces: ManifestFace[];
  groups?: Record<string, string[]>;
}

export function writeManifest(path: string, input: ManifestInput): void {
  const manifest: Record<string, unknown> = {
    schema_version: MANIFEST_VERSION,
    corpus_id: input.corpusId,
    split: input.split,
    backends: [...input.backends.entries()]
      .map(([backend_id, m]) => ({ backend_id, dimension: m.dim }))
      .sort((a, b) => (a.backend_id < b.backend_id ? -1 : 1)),
    counts: { images: input.imageIds.length, faces: input.faces.length },
    image_ids: input.imageIds,
    faces: input.faces,
  };
  if (input.groups && Object.keys(input.groups).length > 0) {
    manifest.groups = input.groups;
  }
  fs.writeFileSync(path, stableStringify(manifest, 2));
}

/** JSON with sorted object keys, matching the primary engine's emitter. */
export function stableStringify(value: unknown, indent: number): string {
  const sortKeys = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sortKeys);
    if (v !== null && typeof v === "object") {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as Record<string, unknown>).sort()) {
        out[key] = sortKeys((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sortKeys(value), null, indent);
}

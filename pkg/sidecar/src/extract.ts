/**
 * Extraction jobs: images in, interchange pair out. Detection finds faces,
 * landmarks come from the detected box (or from per-image ground-truth
 * overrides), each face is warped to the canonical 112 crop and embedded by
 * every configured backend. Unreadable images and zero-face images become
 * skip records; a model that fails to load aborts the whole job.
 */
import * as fs from "fs";

import { detectFaces } from "./detect";
import {
  CROP_SIZE,
  CROP_TEMPLATE_112,
  Point,
  SimilarityTransform,
  estimateAlignment,
} from "./geometry";
import { GrayImage, readPpm, toGray, warpCrop } from "./image";
import { BackendMatrix, ManifestFace, writeBlob, writeManifest } from "./mide";
import { LinearEmbedder, loadModel } from "./model";

export interface JobImage {
  image_id: string;
  path: string;
  /** Optional override: one 5-point landmark set per face, skips detection. */
  gt_landmarks?: number[][][];
}

export interface JobSpec {
  corpus_id: string;
  split: string;
  backends: { backend_id: string; model_path: string }[];
  images: JobImage[];
  output_manifest: string;
  output_blob: string;
  skip_log?: string;
}

export interface SkipRecord {
  image_id: string;
  reason: string;
}

export interface ExtractionSummary {
  images: number;
  faces: number;
  skipped: SkipRecord[];
  /** face_ids whose crop sampled outside the source image. */
  out_of_bounds: string[];
}

export class JobError extends Error {}

function loadBackends(spec: JobSpec): LinearEmbedder[] {
  if (spec.backends.length === 0) {
    throw new JobError("job declares no backends");
  }
  return spec.backends.map((b) => {
    let model: LinearEmbedder;
    try {
      model = loadModel(b.model_path);
    } catch (err) {
      throw new JobError(
        `backend ${b.backend_id}: cannot load model ${b.model_path}: ${String(err)}`,
      );
    }
    if (model.backendId !== b.backend_id) {
      throw new JobError(
        `model ${b.model_path} is for backend ${model.backendId}, ` +
          `job requests ${b.backend_id}`,
      );
    }
    return model;
  });
}

export function alignmentToTemplate(landmarks: ReadonlyArray<Point>): SimilarityTransform {
  return estimateAlignment(landmarks, CROP_TEMPLATE_112);
}

/** Embed a crop taken with an externally supplied transform (GT-aligned path). */
export function alignedCropEmbedding(
  gray: GrayImage,
  transform: SimilarityTransform,
  embedder: LinearEmbedder,
): { embedding: Float32Array; outOfBounds: boolean } {
  const { crop, outOfBounds } = warpCrop(gray, transform, CROP_SIZE);
  return { embedding: embedder.embed(crop), outOfBounds };
}

interface PendingFace {
  faceId: string;
  imageId: string;
  bbox: [number, number, number, number];
  landmarks: Point[];
  quality?: number;
  crop: GrayImage;
  outOfBounds: boolean;
}

export function runExtraction(spec: JobSpec): ExtractionSummary {
  const embedders = loadBackends(spec);
  const skipped: SkipRecord[] = [];
  const pending: PendingFace[] = [];
  const imageIds: string[] = [];

  for (const image of spec.images) {
    imageIds.push(image.image_id);
    let gray: GrayImage;
    try {
      gray = toGray(readPpm(image.path));
    } catch (err) {
      skipped.push({ image_id: image.image_id, reason: `unreadable: ${String(err)}` });
      continue;
    }
    let faces: { bbox: [number, number, number, number]; landmarks: Point[]; quality?: number }[];
    if (image.gt_landmarks) {
      faces = image.gt_landmarks.map((lm) => {
        const points = lm.map((p) => [p[0], p[1]] as const);
        const xs = points.map((p) => p[0]);
        const ys = points.map((p) => p[1]);
        const x = Math.min(...xs);
        const y = Math.min(...ys);
        return {
          bbox: [x, y, Math.max(...xs) - x, Math.max(...ys) - y],
          landmarks: points,
        };
      });
    } else {
      faces = detectFaces(gray).map((d) => ({
        bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
        landmarks: d.landmarks,
        quality: d.quality,
      }));
    }
    if (faces.length === 0) {
      skipped.push({ image_id: image.image_id, reason: "no-faces" });
      continue;
    }
    faces.forEach((face, k) => {
      const transform = alignmentToTemplate(face.landmarks);
      const { crop, outOfBounds } = warpCrop(gray, transform, CROP_SIZE);
      pending.push({
        faceId: `${image.image_id}-f${k}`,
        imageId: image.image_id,
        bbox: face.bbox,
        landmarks: face.landmarks,
        quality: face.quality,
        crop,
        outOfBounds,
      });
    });
  }

  const matrices = new Map<string, BackendMatrix>();
  for (const embedder of embedders) {
    const data = new Float32Array(pending.length * embedder.dim);
    pending.forEach((face, row) => {
      data.set(embedder.embed(face.crop), row * embedder.dim);
    });
    matrices.set(embedder.backendId, { dim: embedder.dim, data });
  }

  const manifestFaces: ManifestFace[] = pending.map((face, row) => {
    const rows: Record<string, number> = {};
    for (const embedder of embedders) rows[embedder.backendId] = row;
    const out: ManifestFace = {
      face_id: face.faceId,
      image_id: face.imageId,
      bbox: face.bbox,
      rows,
      landmarks: face.landmarks.map((p) => [p[0], p[1]]),
    };
    if (face.quality !== undefined) out.quality = face.quality;
    return out;
  });

  writeBlob(spec.output_blob, matrices);
  writeManifest(spec.output_manifest, {
    corpusId: spec.corpus_id,
    split: spec.split,
    backends: matrices,
    imageIds,
    faces: manifestFaces,
  });
  const outOfBounds = pending.filter((f) => f.outOfBounds).map((f) => f.faceId);
  if (spec.skip_log) {
    fs.writeFileSync(
      spec.skip_log,
      JSON.stringify({ skipped, out_of_bounds: outOfBounds }, null, 2),
    );
  }
  return {
    images: spec.images.length,
    faces: pending.length,
    skipped,
    out_of_bounds: outOfBounds,
  };
}

/**
 * Synthetic fixture renderer. Faces are bright elliptical patches carrying a
 * deterministic per-identity texture, drawn in face-local coordinates so the
 * same identity produces near-identical aligned crops at any position and
 * scale. Ground-truth boxes and landmarks are recorded alongside the images.
 */
import * as fs from "fs";
import * as path from "path";

import { BBox, Point, landmarksFromBBox } from "./geometry";
import { RgbImage, writePpm } from "./image";
import { mulberry32 } from "./model";

export interface FixtureFaceTruth {
  bbox: BBox;
  landmarks: Point[];
  identity: string;
}

export interface FixtureImageTruth {
  image_id: string;
  path: string;
  faces: FixtureFaceTruth[];
}

const BACKGROUND = 30;

/** Identity texture: a band-limited luminance pattern over face-local uv. */
function identityLuminance(u: number, v: number, phases: number[]): number {
  let acc = 0;
  acc += Math.sin(2 * Math.PI * (2 * u + phases[0]));
  acc += Math.sin(2 * Math.PI * (3 * v + phases[1]));
  acc += Math.sin(2 * Math.PI * (2 * u + 2 * v + phases[2]));
  acc += Math.sin(2 * Math.PI * (4 * u - 3 * v + phases[3]));
  return 0.7 + 0.0625 * acc; // in [0.45, 0.95]
}

export function drawFace(image: RgbImage, box: BBox, phases: number[]): void {
  const cx = box.x + box.w / 2;
  const cy = box.y + box.h / 2;
  const rx = box.w / 2;
  const ry = box.h / 2;
  for (let y = Math.max(0, box.y); y < Math.min(image.height, box.y + box.h); y++) {
    for (let x = Math.max(0, box.x); x < Math.min(image.width, box.x + box.w); x++) {
      const nx = (x + 0.5 - cx) / rx;
      const ny = (y + 0.5 - cy) / ry;
      if (nx * nx + ny * ny > 1) continue;
      const u = (x + 0.5 - box.x) / box.w;
      const v = (y + 0.5 - box.y) / box.h;
      const lum = Math.round(255 * identityLuminance(u, v, phases));
      const i = 3 * (y * image.width + x);
      image.data[i] = lum;
      image.data[i + 1] = lum;
      image.data[i + 2] = lum;
    }
  }
}

export interface FixtureOptions {
  outputDir: string;
  nImages: number;
  nIdentities: number;
  facesPerImage?: [number, number];
  width?: number;
  height?: number;
  seed?: number;
  /** Fraction of images rendered with zero faces (skip-log coverage). */
  emptyFraction?: number;
}

export function identityPhases(identityIndex: number): number[] {
  const rand = mulberry32(0x1d_0000 + identityIndex);
  return [rand(), rand(), rand(), rand()];
}

export function makeFixture(options: FixtureOptions): FixtureImageTruth[] {
  const {
    outputDir,
    nImages,
    nIdentities,
    facesPerImage = [1, 3],
    width = 320,
    height = 240,
    seed = 0,
    emptyFraction = 0,
  } = options;
  fs.mkdirSync(path.join(outputDir, "images"), { recursive: true });
  const rand = mulberry32(seed);
  const truth: FixtureImageTruth[] = [];
  for (let n = 0; n < nImages; n++) {
    const imageId = `img${String(n).padStart(4, "0")}`;
    const imagePath = path.join(outputDir, "images", `${imageId}.ppm`);
    const image: RgbImage = {
      width,
      height,
      data: new Uint8Array(width * height * 3).fill(BACKGROUND),
    };
    const faces: FixtureFaceTruth[] = [];
    if (rand() >= emptyFraction) {
      const count =
        facesPerImage[0] +
        Math.floor(rand() * (facesPerImage[1] - facesPerImage[0] + 1));
      const columns = Math.max(count, 1);
      for (let k = 0; k < count; k++) {
        const identityIndex = Math.floor(rand() * nIdentities);
        const w = 48 + Math.floor(rand() * 32);
        const h = Math.round(w * (1.05 + 0.1 * rand()));
        // one column per face keeps components disjoint
        const cellWidth = Math.floor(width / columns);
        const x = k * cellWidth + 4 + Math.floor(rand() * Math.max(1, cellWidth - w - 8));
        const y = 8 + Math.floor(rand() * Math.max(1, height - h - 16));
        const bbox: BBox = { x, y, w, h };
        drawFace(image, bbox, identityPhases(identityIndex));
        faces.push({
          bbox,
          landmarks: landmarksFromBBox(bbox),
          identity: `id${String(identityIndex).padStart(3, "0")}`,
        });
      }
    }
    writePpm(imagePath, image);
    truth.push({ image_id: imageId, path: imagePath, faces });
  }
  fs.writeFileSync(
    path.join(outputDir, "truth.json"),
    JSON.stringify(truth, null, 2),
  );
  return truth;
}

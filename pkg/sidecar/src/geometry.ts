/**
 * 2-D similarity-transform estimation and the canonical 5-point face crop
 * template. Matches the primary engine's alignment math: least squares over
 * rotation + uniform scale + translation, reflection never allowed.
 */

export const CROP_SIZE = 112;

/** Left eye, right eye, nose tip, left mouth corner, right mouth corner. */
export const CROP_TEMPLATE_112: ReadonlyArray<readonly [number, number]> = [
  [38.2946, 51.6963],
  [73.5318, 51.5014],
  [56.0252, 71.7366],
  [41.5493, 92.3655],
  [70.7299, 92.2041],
];

export type Point = readonly [number, number];

export interface SimilarityTransform {
  /** 2x2 linear part (scale * rotation, det > 0). */
  matrix: [[number, number], [number, number]];
  translation: [number, number];
  scale: number;
  rotation: number;
  /** RMS residual of mapped source points against the destination. */
  residual: number;
}

export class DegenerateLandmarksError extends Error {}

function mean(points: ReadonlyArray<Point>): [number, number] {
  let x = 0;
  let y = 0;
  for (const p of points) {
    x += p[0];
    y += p[1];
  }
  return [x / points.length, y / points.length];
}

/**
 * Closed-form least-squares similarity transform mapping src onto dst.
 * Rotation-only linear part (Horn's method); a mirrored target yields the
 * best proper rotation, never a reflection.
 */
export function estimateAlignment(
  src: ReadonlyArray<Point>,
  dst: ReadonlyArray<Point>,
): SimilarityTransform {
  if (src.length !== dst.length || src.length < 2) {
    throw new DegenerateLandmarksError(
      `need matching point sets of >= 2 points, got ${src.length}/${dst.length}`,
    );
  }
  const ms = mean(src);
  const md = mean(dst);
  let varSrc = 0;
  let a = 0; // sum of dot products
  let b = 0; // sum of cross products
  for (let i = 0; i < src.length; i++) {
    const sx = src[i][0] - ms[0];
    const sy = src[i][1] - ms[1];
    const dx = dst[i][0] - md[0];
    const dy = dst[i][1] - md[1];
    varSrc += sx * sx + sy * sy;
    a += sx * dx + sy * dy;
    b += sx * dy - sy * dx;
  }
  if (varSrc < 1e-12) {
    throw new DegenerateLandmarksError("source landmarks are coincident");
  }
  const spread = Math.hypot(a, b);
  if (spread < 1e-12 * varSrc) {
    throw new DegenerateLandmarksError("landmark configurations are degenerate");
  }
  const rotation = Math.atan2(b, a);
  const scale = spread / varSrc;
  const cos = scale * Math.cos(rotation);
  const sin = scale * Math.sin(rotation);
  const matrix: [[number, number], [number, number]] = [
    [cos, -sin],
    [sin, cos],
  ];
  const translation: [number, number] = [
    md[0] - (cos * ms[0] - sin * ms[1]),
    md[1] - (sin * ms[0] + cos * ms[1]),
  ];
  let ss = 0;
  for (let i = 0; i < src.length; i++) {
    const px = cos * src[i][0] - sin * src[i][1] + translation[0];
    const py = sin * src[i][0] + cos * src[i][1] + translation[1];
    ss += (px - dst[i][0]) ** 2 + (py - dst[i][1]) ** 2;
  }
  return {
    matrix,
    translation,
    scale,
    rotation,
    residual: Math.sqrt(ss / src.length),
  };
}

export function applyTransform(t: SimilarityTransform, p: Point): [number, number] {
  return [
    t.matrix[0][0] * p[0] + t.matrix[0][1] * p[1] + t.translation[0],
    t.matrix[1][0] * p[0] + t.matrix[1][1] * p[1] + t.translation[1],
  ];
}

/** Inverse of a similarity transform (always exists: det = scale^2 > 0). */
export function invertTransform(t: SimilarityTransform): SimilarityTransform {
  const [[m00, m01], [m10, m11]] = t.matrix;
  const det = m00 * m11 - m01 * m10;
  const inv: [[number, number], [number, number]] = [
    [m11 / det, -m01 / det],
    [-m10 / det, m00 / det],
  ];
  const tx = -(inv[0][0] * t.translation[0] + inv[0][1] * t.translation[1]);
  const ty = -(inv[1][0] * t.translation[0] + inv[1][1] * t.translation[1]);
  return {
    matrix: inv,
    translation: [tx, ty],
    scale: 1 / t.scale,
    rotation: -t.rotation,
    residual: t.residual,
  };
}

export interface BBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Landmarks inferred from a face bounding box using the crop template
 * geometry: template coordinates are normalized by the 112 crop box and
 * stretched into the detected box.
 */
export function landmarksFromBBox(box: BBox): Point[] {
  return CROP_TEMPLATE_112.map(([tx, ty]) => [
    box.x + (tx / CROP_SIZE) * box.w,
    box.y + (ty / CROP_SIZE) * box.h,
  ]);
}

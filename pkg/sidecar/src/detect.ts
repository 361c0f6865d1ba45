/**
 * Face detection for fixture-style imagery: luminance thresholding plus
 * 4-connected component labeling. Faces are bright regions on a darker
 * background; landmarks derive from the detected box via the crop template.
 */
import { BBox, Point, landmarksFromBBox } from "./geometry";
import { GrayImage } from "./image";

export interface Detection {
  bbox: BBox;
  landmarks: Point[];
  /** Mean luminance inside the box, used as a crude quality proxy. */
  quality: number;
}

export interface DetectOptions {
  /** Absolute luminance threshold; by default mean + 1.0 * std. */
  threshold?: number;
  /** Components smaller than this many pixels are discarded. */
  minArea?: number;
}

export function detectFaces(image: GrayImage, options: DetectOptions = {}): Detection[] {
  const n = image.width * image.height;
  let threshold = options.threshold;
  if (threshold === undefined) {
    let sum = 0;
    for (let i = 0; i < n; i++) sum += image.data[i];
    const mean = sum / n;
    let varAcc = 0;
    for (let i = 0; i < n; i++) varAcc += (image.data[i] - mean) ** 2;
    // the floor keeps a perfectly flat image from matching everywhere
    threshold = mean + Math.max(Math.sqrt(varAcc / n), 1e-3);
  }
  const minArea = options.minArea ?? 64;

  const labels = new Int32Array(n).fill(-1);
  const detections: Detection[] = [];
  const queue = new Int32Array(n);

  for (let start = 0; start < n; start++) {
    if (labels[start] !== -1 || image.data[start] < threshold) continue;
    const label = detections.length;
    let head = 0;
    let tail = 0;
    queue[tail++] = start;
    labels[start] = label;
    let minX = image.width;
    let minY = image.height;
    let maxX = 0;
    let maxY = 0;
    let area = 0;
    let lumSum = 0;
    while (head < tail) {
      const idx = queue[head++];
      const x = idx % image.width;
      const y = (idx / image.width) | 0;
      area++;
      lumSum += image.data[idx];
      if (x < minX) minX = x;
      if (x > maxX) maxX = x;
      if (y < minY) minY = y;
      if (y > maxY) maxY = y;
      const neighbors = [idx - 1, idx + 1, idx - image.width, idx + image.width];
      for (const nb of neighbors) {
        if (nb < 0 || nb >= n) continue;
        if (Math.abs((nb % image.width) - x) > 1) continue; // row wrap
        if (labels[nb] === -1 && image.data[nb] >= threshold) {
          labels[nb] = label;
          queue[tail++] = nb;
        }
      }
    }
    if (area < minArea) continue;
    const bbox: BBox = { x: minX, y: minY, w: maxX - minX + 1, h: maxY - minY + 1 };
    detections.push({
      bbox,
      landmarks: landmarksFromBBox(bbox),
      quality: lumSum / area,
    });
  }
  // stable reading order: top-to-bottom, then left-to-right
  detections.sort((a, b) => a.bbox.y - b.bbox.y || a.bbox.x - b.bbox.x);
  return detections;
}

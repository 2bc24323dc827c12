// Screen <-> image coordinate mapping. The canvas shows the image at an
// exact integer scale factor, so a screen point q maps to pixel floor(q / s).

export type Pixel = [number, number];

export function screenToImage(x: number, y: number, scale: number): Pixel {
  if (!Number.isInteger(scale) || scale < 1) {
    throw new Error(`display scale must be a positive integer, got ${scale}`);
  }
  return [Math.floor(x / scale), Math.floor(y / scale)];
}

/** Screen position of a pixel's center; inverse of screenToImage there. */
export function imageToScreen(p: Pixel, scale: number): [number, number] {
  return [p[0] * scale + scale / 2, p[1] * scale + scale / 2];
}

export function samePixel(a: Pixel, b: Pixel): boolean {
  return a[0] === b[0] && a[1] === b[1];
}

import type { BBox } from './types.js';

/** CSS-pixel rectangle relative to the displayed image's top-left corner. */
export interface OverlayRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

/**
 * Map a server bbox (source-image pixel space, top-left origin) onto the
 * displayed image. Scaling is per-axis so letterboxed or stretched images
 * still carry the box on the same pixels.
 */
export function overlayRect(
  bbox: BBox,
  naturalWidth: number,
  naturalHeight: number,
  displayWidth: number,
  displayHeight: number,
): OverlayRect {
  if (naturalWidth <= 0 || naturalHeight <= 0) {
    throw new Error('natural image size must be positive');
  }
  const scaleX = displayWidth / naturalWidth;
  const scaleY = displayHeight / naturalHeight;
  return {
    left: bbox.x0 * scaleX,
    top: bbox.y0 * scaleY,
    width: bbox.w * scaleX,
    height: bbox.h * scaleY,
  };
}

/** Shared zoom/pan state applied to both image panes. */
export interface Transform {
  scale: number;
  x: number;
  y: number;
}

export const IDENTITY: Transform = { scale: 1, x: 0, y: 0 };

export const MIN_SCALE = 1;
export const MAX_SCALE = 8;

/**
 * Zoom by `factor` keeping the content point under the cursor fixed.
 * Cursor coordinates are relative to the viewport's top-left corner.
 */
export function zoomAt(
  transform: Transform,
  cursorX: number,
  cursorY: number,
  factor: number,
  minScale: number = MIN_SCALE,
  maxScale: number = MAX_SCALE,
): Transform {
  const scale = Math.min(maxScale, Math.max(minScale, transform.scale * factor));
  if (scale === transform.scale) return transform;
  const ratio = scale / transform.scale;
  return {
    scale,
    x: cursorX - (cursorX - transform.x) * ratio,
    y: cursorY - (cursorY - transform.y) * ratio,
  };
}

export function panBy(transform: Transform, dx: number, dy: number): Transform {
  return { ...transform, x: transform.x + dx, y: transform.y + dy };
}

/**
 * Keep the scaled content covering the viewport: offsets may never expose a
 * gap, and at scale 1 the transform collapses to identity.
 */
export function clampPan(transform: Transform, viewWidth: number, viewHeight: number): Transform {
  const minX = viewWidth - viewWidth * transform.scale;
  const minY = viewHeight - viewHeight * transform.scale;
  return {
    scale: transform.scale,
    x: Math.min(0, Math.max(minX, transform.x)),
    y: Math.min(0, Math.max(minY, transform.y)),
  };
}

export function toCss(transform: Transform): string {
  return `translate(${transform.x}px, ${transform.y}px) scale(${transform.scale})`;
}

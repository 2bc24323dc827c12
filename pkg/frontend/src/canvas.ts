// Canvas rendering: the frame image scaled by an integer factor, anchors as
// circles, the in-flight drag as an arrow, and the alpha/K readout echoed
// from the server (the protocol echo is the single source of truth; the
// client never recomputes the gesture math).

import { Pixel, imageToScreen } from "./coords.js";
import { Frame } from "./protocol.js";

export interface Overlays {
  anchors: Pixel[];
  drag: { start: Pixel; current: Pixel } | null;
}

export class CanvasRenderer {
  private image: HTMLImageElement | null = null;

  constructor(
    private readonly context: CanvasRenderingContext2D,
    private readonly scale: number,
  ) {}

  showFrame(frame: Frame, overlays: Overlays, onReady?: () => void): void {
    const img = new Image();
    img.onload = () => {
      this.image = img;
      this.redraw(overlays);
      onReady?.();
    };
    img.src = `data:image/png;base64,${frame.image}`;
  }

  redraw(overlays: Overlays): void {
    const ctx = this.context;
    ctx.imageSmoothingEnabled = false;
    if (this.image) {
      ctx.drawImage(
        this.image,
        0,
        0,
        this.image.width * this.scale,
        this.image.height * this.scale,
      );
    }
    for (const anchor of overlays.anchors) {
      const [x, y] = imageToScreen(anchor, this.scale);
      ctx.beginPath();
      ctx.arc(x, y, Math.max(4, this.scale / 2), 0, 2 * Math.PI);
      ctx.strokeStyle = "#3b82f6";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
    if (overlays.drag) {
      const [sx, sy] = imageToScreen(overlays.drag.start, this.scale);
      const [ex, ey] = imageToScreen(overlays.drag.current, this.scale);
      this.arrow(sx, sy, ex, ey);
    }
  }

  private arrow(sx: number, sy: number, ex: number, ey: number): void {
    const ctx = this.context;
    ctx.strokeStyle = "#ffffff";
    ctx.fillStyle = "#ffffff";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(sx, sy);
    ctx.lineTo(ex, ey);
    ctx.stroke();
    const angle = Math.atan2(ey - sy, ex - sx);
    const head = 8;
    ctx.beginPath();
    ctx.moveTo(ex, ey);
    ctx.lineTo(ex - head * Math.cos(angle - 0.5), ey - head * Math.sin(angle - 0.5));
    ctx.lineTo(ex - head * Math.cos(angle + 0.5), ey - head * Math.sin(angle + 0.5));
    ctx.closePath();
    ctx.fill();
  }
}

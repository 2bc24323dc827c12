// Pointer and keyboard state machine: raw pointer events in screen
// coordinates become semantic edit events in image pixels. A press-release
// without pixel movement toggles an anchor; movement is a drag whose z_key
// reflects the modifier held when the drag started; wheel turns become
// click counts. Eq.-of-motion math stays server-side, so the only geometry
// here is the integer screen-to-image mapping.

import { Pixel, samePixel, screenToImage } from "./coords.js";
import { ZKey } from "./protocol.js";

export type EditEvent =
  | { kind: "drag"; s: Pixel; e: Pixel; zKey: ZKey }
  | { kind: "anchor_add"; p: Pixel }
  | { kind: "anchor_remove"; p: Pixel }
  | { kind: "wheel"; p: Pixel; clicks: number };

export interface KeyBindings {
  zoomIn: string;
  zoomOut: string;
}

export const DEFAULT_KEY_BINDINGS: KeyBindings = { zoomIn: "i", zoomOut: "o" };

interface ActiveDrag {
  start: Pixel;
  current: Pixel;
  moved: boolean;
  zKey: ZKey;
}

export class GestureInterpreter {
  readonly anchors: Pixel[] = [];
  private drag: ActiveDrag | null = null;
  private heldKeys = new Set<string>();

  constructor(
    private readonly scale: number,
    private readonly emit: (event: EditEvent) => void,
    private readonly keys: KeyBindings = DEFAULT_KEY_BINDINGS,
  ) {}

  get activeDrag(): { start: Pixel; current: Pixel } | null {
    return this.drag && this.drag.moved
      ? { start: this.drag.start, current: this.drag.current }
      : null;
  }

  keyDown(key: string): void {
    this.heldKeys.add(key);
  }

  keyUp(key: string): void {
    this.heldKeys.delete(key);
  }

  private currentZKey(): ZKey {
    if (this.heldKeys.has(this.keys.zoomIn)) return "zoom_in";
    if (this.heldKeys.has(this.keys.zoomOut)) return "zoom_out";
    return "none";
  }

  pointerDown(x: number, y: number): void {
    const p = screenToImage(x, y, this.scale);
    this.drag = { start: p, current: p, moved: false, zKey: this.currentZKey() };
  }

  pointerMove(x: number, y: number): void {
    if (!this.drag) return;
    const p = screenToImage(x, y, this.scale);
    if (samePixel(p, this.drag.current)) return;
    this.drag.current = p;
    if (samePixel(p, this.drag.start)) return;
    this.drag.moved = true;
    this.emit({ kind: "drag", s: this.drag.start, e: p, zKey: this.drag.zKey });
  }

  pointerUp(x: number, y: number): void {
    if (!this.drag) return;
    const drag = this.drag;
    this.drag = null;
    const p = screenToImage(x, y, this.scale);
    if (drag.moved) return; // final drag message already emitted on move
    const index = this.anchors.findIndex((a) => samePixel(a, p));
    if (index >= 0) {
      this.anchors.splice(index, 1);
      this.emit({ kind: "anchor_remove", p });
    } else {
      this.anchors.push(p);
      this.emit({ kind: "anchor_add", p });
    }
  }

  /** Wheel turn at a screen point; deltaY < 0 (scroll up) zooms in. */
  wheel(x: number, y: number, deltaY: number): void {
    if (deltaY === 0) return;
    const p = screenToImage(x, y, this.scale);
    this.emit({ kind: "wheel", p, clicks: deltaY < 0 ? 1 : -1 });
  }

  /** Drop overlay state after commit/revert. */
  clear(): void {
    this.drag = null;
  }
}

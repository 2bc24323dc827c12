// Editing client: turns semantic edit events into validated wire messages
// and folds server responses into display state. Gesture ids are assigned
// monotonically on the client; at most one gesture is un-acknowledged at a
// time (newer gestures replace the pending one), and frames older than the
// newest sent gesture id are discarded instead of displayed.

import { EditEvent } from "./gestures.js";
import { Frame, Request, parseResponse, requestSchema } from "./protocol.js";

export interface Transport {
  readonly connected: boolean;
  send(data: string): void;
}

export type ConnectionStatus = "connected" | "disconnected";

export interface ClientListener {
  onFrame?(frame: Frame): void;
  onError?(message: string): void;
  onStatus?(status: ConnectionStatus, detail: string): void;
}

export class EditorClient {
  sessionId: string | null = null;
  displayedFrame: Frame | null = null;

  private nextGestureId = 1;
  private latestSentGestureId = 0;
  private outstandingGestureId: number | null = null;
  private pendingGesture: Request | null = null;

  constructor(
    private readonly transport: Transport,
    private readonly listener: ClientListener = {},
  ) {}

  createSession(seed: number): void {
    this.send({ type: "create_session", seed });
  }

  handleEdit(event: EditEvent): void {
    const sid = this.requireSession();
    switch (event.kind) {
      case "drag":
        this.sendGesture((gestureId) => ({
          type: "drag",
          session_id: sid,
          gesture_id: gestureId,
          s: event.s,
          e: event.e,
          z_key: event.zKey,
        }));
        break;
      case "wheel":
        this.sendGesture((gestureId) => ({
          type: "wheel",
          session_id: sid,
          gesture_id: gestureId,
          p: event.p,
          clicks: event.clicks,
        }));
        break;
      case "anchor_add":
        this.send({ type: "anchor_add", session_id: sid, p: event.p });
        break;
      case "anchor_remove":
        this.send({ type: "anchor_remove", session_id: sid, p: event.p });
        break;
    }
  }

  commit(): void {
    this.send({ type: "commit", session_id: this.requireSession() });
  }

  revert(): void {
    this.send({ type: "revert", session_id: this.requireSession() });
  }

  setBeta(beta: number): void {
    this.send({ type: "set_beta", session_id: this.requireSession(), beta });
  }

  /** Feed one raw server payload; returns the frame if it was displayed. */
  handleMessage(raw: string): Frame | null {
    let response;
    try {
      response = parseResponse(raw);
    } catch (err) {
      this.listener.onError?.(`malformed frame: ${String(err)}`);
      return null;
    }
    if (response.type === "error") {
      this.listener.onError?.(response.message);
      return null;
    }
    if (this.sessionId === null) {
      this.sessionId = response.session_id;
    }
    if (response.gesture_id !== null) {
      if (response.gesture_id === this.outstandingGestureId) {
        this.outstandingGestureId = null;
        this.flushPending();
      }
      if (response.gesture_id < this.latestSentGestureId) {
        return null; // stale: a newer gesture is already in flight
      }
    }
    this.displayedFrame = response;
    this.listener.onFrame?.(response);
    return response;
  }

  private requireSession(): string {
    if (this.sessionId === null) {
      throw new Error("no session; call createSession first");
    }
    return this.sessionId;
  }

  private sendGesture(build: (gestureId: number) => Request): void {
    if (this.outstandingGestureId !== null) {
      // Latest wins: the unsent gesture is replaced, its id never used.
      this.pendingGesture = build(this.nextGestureId);
      return;
    }
    const message = build(this.nextGestureId);
    this.nextGestureId += 1;
    this.outstandingGestureId = (message as { gesture_id: number }).gesture_id;
    this.latestSentGestureId = this.outstandingGestureId;
    this.send(message);
  }

  private flushPending(): void {
    if (this.pendingGesture === null) return;
    const message = this.pendingGesture;
    this.pendingGesture = null;
    this.nextGestureId += 1;
    this.outstandingGestureId = (message as { gesture_id: number }).gesture_id;
    this.latestSentGestureId = this.outstandingGestureId;
    this.send(message);
  }

  private send(message: Request): void {
    requestSchema.parse(message);
    if (!this.transport.connected) {
      this.listener.onStatus?.("disconnected", "input dropped: not connected");
      return;
    }
    this.transport.send(JSON.stringify(message));
  }
}

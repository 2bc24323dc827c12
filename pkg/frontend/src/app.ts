// Browser entry point: wires the websocket, gesture interpreter, client,
// and canvas together. Everything testable lives in the other modules;
// this file is DOM plumbing only.

import { CanvasRenderer } from "./canvas.js";
import { EditorClient, Transport } from "./client.js";
import { GestureInterpreter } from "./gestures.js";

const SCALE = 8;

class WebSocketTransport implements Transport {
  private socket: WebSocket;

  constructor(url: string, onMessage: (raw: string) => void, onStatus: (open: boolean) => void) {
    this.socket = new WebSocket(url);
    this.socket.onmessage = (event) => onMessage(String(event.data));
    this.socket.onopen = () => onStatus(true);
    this.socket.onclose = () => onStatus(false);
  }

  get connected(): boolean {
    return this.socket.readyState === WebSocket.OPEN;
  }

  send(data: string): void {
    this.socket.send(data);
  }
}

export function startApp(root: Document): void {
  const canvas = root.getElementById("editor") as HTMLCanvasElement;
  const status = root.getElementById("status") as HTMLElement;
  const readout = root.getElementById("readout") as HTMLElement;
  const betaSlider = root.getElementById("beta") as HTMLInputElement;
  const context = canvas.getContext("2d");
  if (!context) throw new Error("2d canvas context unavailable");

  const renderer = new CanvasRenderer(context, SCALE);
  const overlays = () => ({
    anchors: interpreter.anchors,
    drag: interpreter.activeDrag,
  });

  const client: EditorClient = new EditorClient(
    new WebSocketTransport(
      `ws://${root.location.host}/ws`,
      (raw) => client.handleMessage(raw),
      (open) => {
        status.textContent = open ? "connected" : "disconnected";
        if (open) client.createSession(0);
      },
    ),
    {
      onFrame: (frame) => {
        renderer.showFrame(frame, overlays());
        if (frame.alpha !== null && frame.k !== null) {
          readout.textContent = `alpha ${frame.alpha.toFixed(3)}  K ${frame.k}`;
        }
      },
      onError: (message) => {
        status.textContent = `error: ${message}`;
      },
      onStatus: (_state, detail) => {
        status.textContent = detail;
      },
    },
  );

  const interpreter = new GestureInterpreter(SCALE, (event) => {
    client.handleEdit(event);
    renderer.redraw(overlays());
  });

  canvas.addEventListener("pointerdown", (e) => interpreter.pointerDown(e.offsetX, e.offsetY));
  canvas.addEventListener("pointermove", (e) => interpreter.pointerMove(e.offsetX, e.offsetY));
  canvas.addEventListener("pointerup", (e) => interpreter.pointerUp(e.offsetX, e.offsetY));
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    interpreter.wheel(e.offsetX, e.offsetY, e.deltaY);
  });
  root.addEventListener("keydown", (e) => interpreter.keyDown(e.key));
  root.addEventListener("keyup", (e) => interpreter.keyUp(e.key));

  root.getElementById("commit")?.addEventListener("click", () => {
    client.commit();
    interpreter.clear();
  });
  root.getElementById("revert")?.addEventListener("click", () => {
    client.revert();
    interpreter.clear();
  });
  betaSlider.addEventListener("change", () => client.setBeta(Number(betaSlider.value)));
}

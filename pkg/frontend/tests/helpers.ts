import { EditorClient, ClientListener, Transport } from "../src/client.js";
import { GestureInterpreter } from "../src/gestures.js";
import { Frame } from "../src/protocol.js";

export class FakeTransport implements Transport {
  connected = true;
  readonly sent: string[] = [];

  send(data: string): void {
    this.sent.push(data);
  }

  sentMessages(): unknown[] {
    return this.sent.map((raw) => JSON.parse(raw));
  }
}

export function makeFrame(
  sessionId: string,
  gestureId: number | null,
  image: string,
): Frame {
  return {
    type: "frame",
    session_id: sessionId,
    gesture_id: gestureId,
    image,
    alpha: gestureId === null ? null : 0.5,
    k: gestureId === null ? null : 1,
    v: gestureId === null ? null : [1, 0, 0],
    notice: null,
  };
}

export interface Harness {
  transport: FakeTransport;
  client: EditorClient;
  interpreter: GestureInterpreter;
  errors: string[];
  /** Deliver a frame as raw JSON, as the websocket would. */
  deliver(frame: Frame): void;
}

export function makeHarness(scale = 8, listener: ClientListener = {}): Harness {
  const transport = new FakeTransport();
  const errors: string[] = [];
  const client = new EditorClient(transport, {
    onError: (message) => errors.push(message),
    ...listener,
  });
  const interpreter = new GestureInterpreter(scale, (event) =>
    client.handleEdit(event),
  );
  return {
    transport,
    client,
    interpreter,
    errors,
    deliver: (frame) => client.handleMessage(JSON.stringify(frame)),
  };
}

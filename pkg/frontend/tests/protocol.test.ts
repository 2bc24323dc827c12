// S1: protocol conformance. A scripted drag + anchor + wheel session must
// emit messages that validate against the wire schema and equal, message
// for message, the log a headless client would send for the same edits.
// The server renders byte-identical frames for identical logs (covered by
// the backend's service-determinism acceptance test), so message equality
// here implies frame equality there.

import { describe, expect, it } from "vitest";

import { requestSchema } from "../src/protocol.js";
import { makeFrame, makeHarness } from "./helpers.js";

const SCALE = 8;
const SID = "session-0001";

// Screen coordinate of an image pixel (offset inside the scaled cell).
const screen = (pixel: number) => pixel * SCALE + 3;

describe("scripted session", () => {
  it("emits the headless client's equivalent log", () => {
    const { transport, client, interpreter, deliver } = makeHarness(SCALE);

    client.createSession(4);
    deliver(makeFrame(SID, null, "initial"));

    // Click without movement: anchor toggle on.
    interpreter.pointerDown(screen(5), screen(5));
    interpreter.pointerUp(screen(5), screen(5));
    deliver(makeFrame(SID, null, "anchor"));

    // Plain drag across two pixels, each move acknowledged.
    interpreter.pointerDown(screen(8), screen(8));
    interpreter.pointerMove(screen(18), screen(14));
    deliver(makeFrame(SID, 1, "g1"));
    interpreter.pointerMove(screen(20), screen(20));
    interpreter.pointerUp(screen(20), screen(20));
    deliver(makeFrame(SID, 2, "g2"));

    // Drag with the zoom-in key held when the drag starts.
    interpreter.keyDown("i");
    interpreter.pointerDown(screen(10), screen(10));
    interpreter.pointerMove(screen(16), screen(18));
    deliver(makeFrame(SID, 3, "g3"));
    interpreter.pointerUp(screen(16), screen(18));
    interpreter.keyUp("i");

    // Wheel zoom at the cursor; scroll up means zoom in.
    interpreter.wheel(screen(16), screen(16), -120);
    deliver(makeFrame(SID, 4, "g4"));

    // Second click on the anchored pixel toggles it off.
    interpreter.pointerDown(screen(5), screen(5));
    interpreter.pointerUp(screen(5), screen(5));
    deliver(makeFrame(SID, null, "anchor-off"));

    client.commit();
    deliver(makeFrame(SID, null, "committed"));
    client.setBeta(0.05);
    deliver(makeFrame(SID, null, "beta"));
    client.revert();
    deliver(makeFrame(SID, null, "reverted"));

    const headlessLog = [
      { type: "create_session", seed: 4 },
      { type: "anchor_add", session_id: SID, p: [5, 5] },
      { type: "drag", session_id: SID, gesture_id: 1, s: [8, 8], e: [18, 14], z_key: "none" },
      { type: "drag", session_id: SID, gesture_id: 2, s: [8, 8], e: [20, 20], z_key: "none" },
      { type: "drag", session_id: SID, gesture_id: 3, s: [10, 10], e: [16, 18], z_key: "zoom_in" },
      { type: "wheel", session_id: SID, gesture_id: 4, p: [16, 16], clicks: 1 },
      { type: "anchor_remove", session_id: SID, p: [5, 5] },
      { type: "commit", session_id: SID },
      { type: "set_beta", session_id: SID, beta: 0.05 },
      { type: "revert", session_id: SID },
    ];

    const sent = transport.sentMessages();
    for (const message of sent) {
      expect(() => requestSchema.parse(message)).not.toThrow();
    }
    expect(sent).toEqual(headlessLog);
  });

  it("coalesces unacknowledged drag moves, latest wins", () => {
    const { transport, client, interpreter, deliver } = makeHarness(SCALE);
    client.createSession(0);
    deliver(makeFrame(SID, null, "initial"));

    interpreter.pointerDown(screen(2), screen(2));
    interpreter.pointerMove(screen(6), screen(2));
    interpreter.pointerMove(screen(8), screen(4)); // replaces the unsent update
    interpreter.pointerMove(screen(9), screen(6)); // replaces it again
    expect(transport.sentMessages()).toHaveLength(2); // create + first drag

    deliver(makeFrame(SID, 1, "g1")); // ack releases only the newest pending
    const sent = transport.sentMessages();
    expect(sent).toHaveLength(3);
    expect(sent[2]).toEqual({
      type: "drag",
      session_id: SID,
      gesture_id: 2,
      s: [2, 2],
      e: [9, 6],
      z_key: "none",
    });
  });

  it("drops input while disconnected and reports status", () => {
    const statuses: string[] = [];
    const { transport, client, deliver } = makeHarness(SCALE, {
      onStatus: (_state, detail) => statuses.push(detail),
    });
    client.createSession(0);
    deliver(makeFrame(SID, null, "initial"));

    transport.connected = false;
    client.commit();
    expect(transport.sentMessages()).toHaveLength(1); // only create_session
    expect(statuses).toContain("input dropped: not connected");
  });

  it("rejects malformed outgoing messages before sending", () => {
    const { client, deliver } = makeHarness(SCALE);
    client.createSession(0);
    deliver(makeFrame(SID, null, "initial"));
    expect(() => client.setBeta(-1)).toThrow();
  });
});

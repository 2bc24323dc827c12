"""Websocket editing service.

A transport-independent ``EditingService`` maps incoming JSON wire messages
to frame or error responses; a thin FastAPI websocket endpoint pumps messages
through it. Frames are lossless PNGs, base64-encoded, so replaying a recorded
message log against the same checkpoints reproduces byte-identical payloads.

Wire message types (field ``type``):

- ``create_session``: ``{"type", "seed"}`` or ``{"type", "latent": [[...]],
  "use_average_direction": bool}``. Response: ``frame`` carrying the new
  ``session_id`` and the initial image.
- ``drag``: ``{"type", "session_id", "gesture_id", "s": [x, y],
  "e": [x, y], "z_key": "none"|"zoom_in"|"zoom_out"}``.
- ``anchor_add`` / ``anchor_remove``: ``{"type", "session_id", "p": [x, y]}``.
- ``wheel``: ``{"type", "session_id", "gesture_id", "p": [x, y], "clicks"}``.
- ``commit`` / ``revert``: ``{"type", "session_id"}``.
- ``set_beta``: ``{"type", "session_id", "beta"}``.
- Responses: ``frame`` with ``{"session_id", "gesture_id", "image" (base64
  PNG), "alpha", "k", "v", "notice"}`` or ``error`` with ``{"message"}``.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import InputError, LatentDragError
from .generator import Generator
from .interaction import (
    DragGesture,
    EditSession,
    InteractionConfig,
    assemble,
    drag_to_input,
    wheel_to_input,
)
from .transformer import LatentTransformer


@dataclass
class ServerConfig:
    generator_checkpoint: str
    transformer_checkpoint: str
    host: str = "127.0.0.1"
    port: int = 8000
    max_sessions: int = 32
    beta: float = 0.02


def encode_frame(image: torch.Tensor) -> str:
    """Base64 PNG of an (H, W, 3) image in [-1, 1]."""
    from PIL import Image

    arr = ((image.detach().numpy() + 1.0) * 127.5).round().clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class EditingService:
    """Session registry plus the message dispatch loop, transport-free."""

    def __init__(
        self,
        generator: Generator,
        transformer: LatentTransformer,
        interaction: InteractionConfig | None = None,
        max_sessions: int = 32,
    ):
        self.generator = generator
        self.transformer = transformer
        self.interaction = interaction or InteractionConfig()
        self.max_sessions = max_sessions
        self.sessions: dict[str, EditSession] = {}
        self._session_beta: dict[str, float] = {}
        self._session_avg_mode: dict[str, bool] = {}
        self._next_id = 1
        self.w_bar = generator.average_latent(256, seed=0)
        self._avg_features = None

    # -- message plumbing ----------------------------------------------------

    def handle(self, message: dict) -> dict:
        """Dispatch one wire message; all failures become error responses."""
        try:
            if not isinstance(message, dict) or "type" not in message:
                raise InputError("message must be an object with a 'type' field")
            kind = message["type"]
            handlers = {
                "create_session": self._create_session,
                "drag": self._drag,
                "anchor_add": self._anchor_add,
                "anchor_remove": self._anchor_remove,
                "wheel": self._wheel,
                "commit": self._commit,
                "revert": self._revert,
                "set_beta": self._set_beta,
            }
            if kind not in handlers:
                raise InputError(f"unknown message type {kind!r}")
            return handlers[kind](message)
        except LatentDragError as exc:
            return {"type": "error", "message": str(exc)}

    def _session(self, message: dict) -> EditSession:
        sid = message.get("session_id")
        if sid not in self.sessions:
            raise InputError(f"unknown session {sid!r}")
        return self.sessions[sid]

    def _frame(self, session: EditSession, message: dict, **extra) -> dict:
        w = session.w_current if session.w_current is not None else session.w_before
        image = self.generator.synthesize(w)
        payload = {
            "type": "frame",
            "session_id": session.session_id,
            "gesture_id": message.get("gesture_id"),
            "image": encode_frame(image),
            "alpha": None,
            "k": None,
            "v": None,
            "notice": None,
        }
        payload.update(extra)
        return payload

    # -- session lifecycle -----------------------------------------------------

    def _create_session(self, message: dict) -> dict:
        if len(self.sessions) >= self.max_sessions:
            raise InputError(f"session limit ({self.max_sessions}) reached")
        cfg = self.generator.config
        if "latent" in message:
            latent = torch.as_tensor(message["latent"], dtype=torch.float32)
            expected = (cfg.num_wplus, cfg.latent_dim)
            if tuple(latent.shape) != expected:
                raise InputError(
                    f"latent must have shape {expected[0]}x{expected[1]}, got "
                    f"{tuple(latent.shape)}"
                )
            w = latent
        else:
            seed = int(message.get("seed", 0))
            z = self.generator.sample_z(seed)
            w = self.generator.broadcast(self.generator.map_z_to_w(z)[0])
        sid = f"session-{self._next_id:04d}"
        self._next_id += 1
        session = EditSession(
            session_id=sid,
            w_before=w,
            image_resolution=cfg.output_resolution,
        )
        self.sessions[sid] = session
        self._session_beta[sid] = self.interaction.beta
        self._session_avg_mode[sid] = bool(message.get("use_average_direction", False))
        return self._frame(session, message)

    # -- gestures --------------------------------------------------------------

    def _interaction_config(self, sid: str) -> InteractionConfig:
        return replace(self.interaction, beta=self._session_beta[sid])

    def _features_for(self, session: EditSession):
        if self._session_avg_mode[session.session_id]:
            # Average-latent mode: the transformer sees w_bar in place of the
            # session's (typically inverted) codes, features included.
            if self._avg_features is None:
                self._avg_features = self.generator.extract_feature_map(
                    self.generator.broadcast(self.w_bar)
                )
            return self._avg_features
        if session.features is None:
            session.features = self.generator.extract_feature_map(session.w_before)
        return session.features

    def _apply_edit(self, session: EditSession, vector, position, alpha: float) -> dict:
        inputs, alpha = assemble(session, vector, position, alpha)
        features = self._features_for(session)
        if self._session_avg_mode[session.session_id]:
            base = self.generator.broadcast(self.w_bar)
            directions = self.transformer.estimate_directions(base, inputs, features)
            edited = session.w_before.clone()
            idx = list(self.transformer.config.trainable_layer_indices)
            edited[idx] = edited[idx] + alpha * directions.to(edited.dtype)
        else:
            edited = self.transformer.transform(
                session.w_before, inputs, alpha, features
            )
        session.w_current = edited.detach()
        return {"alpha": alpha, "k": len(inputs)}

    def _drag(self, message: dict) -> dict:
        session = self._session(message)
        gesture = DragGesture(
            start=tuple(message["s"]),
            end=tuple(message["e"]),
            z_key=message.get("z_key", "none"),
        )
        cfg = self._interaction_config(session.session_id)
        vector, position, alpha = drag_to_input(gesture, cfg)
        info = self._apply_edit(session, vector, position, alpha)
        return self._frame(session, message, v=vector.tolist(), **info)

    def _wheel(self, message: dict) -> dict:
        session = self._session(message)
        cfg = self._interaction_config(session.session_id)
        vector, position, alpha = wheel_to_input(
            message["p"], int(message["clicks"]), cfg, session.image_resolution
        )
        info = self._apply_edit(session, vector, position, alpha)
        return self._frame(session, message, v=vector.tolist(), **info)

    def _anchor_add(self, message: dict) -> dict:
        session = self._session(message)
        added = session.add_anchor(message["p"])
        notice = None if added else "anchor already present; deduplicated"
        return self._frame(session, message, k=len(session.anchors), notice=notice)

    def _anchor_remove(self, message: dict) -> dict:
        session = self._session(message)
        removed = session.remove_anchor(message["p"])
        notice = None if removed else "no anchor at that position"
        return self._frame(session, message, k=len(session.anchors), notice=notice)

    # -- state machine -----------------------------------------------------------

    def _commit(self, message: dict) -> dict:
        session = self._session(message)
        committed = session.commit()
        notice = None if committed else "no in-flight edit to commit"
        return self._frame(session, message, notice=notice)

    def _revert(self, message: dict) -> dict:
        session = self._session(message)
        reverted = session.revert()
        notice = None if reverted else "no in-flight edit to revert"
        return self._frame(session, message, notice=notice)

    def _set_beta(self, message: dict) -> dict:
        session = self._session(message)
        beta = float(message["beta"])
        if beta <= 0:
            raise InputError("beta must be positive")
        self._session_beta[session.session_id] = beta
        return self._frame(session, message, notice=f"beta set to {beta}")


def create_app(service: EditingService):
    """FastAPI app exposing the service on the /ws websocket endpoint."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="latentdrag")

    async def ws(socket):
        await socket.accept()
        try:
            while True:
                message = await socket.receive_json()
                await socket.send_json(service.handle(message))
        except WebSocketDisconnect:
            pass

    # Bind the annotation as a class object: this module uses postponed
    # annotations, which FastAPI cannot resolve against a local import.
    ws.__annotations__ = {"socket": WebSocket}
    app.websocket("/ws")(ws)
    return app


def load_service(config: ServerConfig) -> EditingService:
    generator = Generator.load_weights(config.generator_checkpoint).eval()
    transformer = LatentTransformer.load_weights(config.transformer_checkpoint).eval()
    return EditingService(
        generator,
        transformer,
        interaction=InteractionConfig(beta=config.beta),
        max_sessions=config.max_sessions,
    )


def serve(config: ServerConfig) -> None:
    import uvicorn

    app = create_app(load_service(config))
    uvicorn.run(app, host=config.host, port=config.port)

"""Gesture-to-input mapping and edit-session state.

Drags become unit motion vectors anchored at the start pixel with strength
alpha proportional to drag length; anchor points become zero vectors; wheel
clicks become pure depth motion. An edit session holds the base latents, the
anchor set, and the cached feature grid, and re-derives every preview from
the original base latents so alpha stays linear within a gesture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .errors import InputError
from .transformer import UserInputSet

ZKey = str  # "none" | "zoom_in" | "zoom_out"
_Z_KEYS = ("none", "zoom_in", "zoom_out")


@dataclass(frozen=True)
class DragGesture:
    start: tuple[int, int]
    end: tuple[int, int]
    z_key: ZKey = "none"

    def __post_init__(self):
        if self.z_key not in _Z_KEYS:
            raise InputError(f"z_key must be one of {_Z_KEYS}, got {self.z_key!r}")
        if tuple(self.start) == tuple(self.end):
            raise InputError("drag start equals end; use an anchor or wheel action")


@dataclass(frozen=True)
class InteractionConfig:
    beta: float = 0.02
    z_in: float = -5.0
    z_out: float = 5.0
    wheel_alpha_step: float = 0.1

    def __post_init__(self):
        if self.beta <= 0:
            raise InputError("beta must be positive")
        if self.wheel_alpha_step <= 0:
            raise InputError("wheel_alpha_step must be positive")


def _check_position(p, image_resolution: int) -> tuple[int, int]:
    x, y = int(p[0]), int(p[1])
    if not (0 <= x < image_resolution and 0 <= y < image_resolution):
        raise InputError(
            f"position ({x}, {y}) outside image of size {image_resolution}"
        )
    return x, y


def drag_to_input(gesture: DragGesture, cfg: InteractionConfig):
    """(motion vector, position, alpha) for a drag: unit xy, z from the key."""
    sx, sy = gesture.start
    ex, ey = gesture.end
    dx, dy = float(ex - sx), float(ey - sy)
    length = math.hypot(dx, dy)
    z = {"none": 0.0, "zoom_in": cfg.z_in, "zoom_out": cfg.z_out}[gesture.z_key]
    vector = torch.tensor([dx / length, dy / length, z], dtype=torch.float32)
    position = (int(sx), int(sy))
    alpha = cfg.beta * length
    return vector, position, alpha


def anchor_to_input(p, image_resolution: int):
    """(zero vector, position) for an anchor point."""
    position = _check_position(p, image_resolution)
    return torch.zeros(3, dtype=torch.float32), position


def wheel_to_input(p, clicks: int, cfg: InteractionConfig, image_resolution: int):
    """(motion vector, position, alpha) for wheel zoom at the cursor."""
    if clicks == 0:
        raise InputError("wheel action requires a non-zero click count")
    position = _check_position(p, image_resolution)
    z = cfg.z_in if clicks > 0 else cfg.z_out
    vector = torch.tensor([0.0, 0.0, z], dtype=torch.float32)
    alpha = abs(clicks) * cfg.wheel_alpha_step
    return vector, position, alpha


@dataclass
class EditSession:
    """State of one interactive edit: base latents, anchors, caches."""

    session_id: str
    w_before: torch.Tensor
    image_resolution: int
    anchors: list[tuple[int, int]] = field(default_factory=list)
    features: object = None  # cached FeatureGrid for w_before
    w_current: torch.Tensor | None = None
    last_frame: bytes | None = None

    def add_anchor(self, p) -> bool:
        """Add an anchor; duplicates at the same pixel collapse to one item."""
        position = _check_position(p, self.image_resolution)
        if position in self.anchors:
            return False
        self.anchors.append(position)
        return True

    def remove_anchor(self, p) -> bool:
        position = (int(p[0]), int(p[1]))
        if position in self.anchors:
            self.anchors.remove(position)
            return True
        return False

    def commit(self) -> bool:
        """Adopt the in-flight edit as the new base; invalidates caches."""
        if self.w_current is None:
            return False
        self.w_before = self.w_current
        self.w_current = None
        self.features = None
        return True

    def revert(self) -> bool:
        """Discard the in-flight edit."""
        if self.w_current is None:
            return False
        self.w_current = None
        return True


def assemble(session: EditSession, gesture_vector, gesture_position, alpha: float):
    """(UserInputSet, alpha): all anchors as zero vectors plus the gesture.

    Anchor order is normalized by sorting so the set is independent of
    insertion order; anchors alone carry no motion and are rejected upstream.
    """
    vectors = [torch.zeros(3, dtype=torch.float32) for _ in sorted(session.anchors)]
    positions = list(sorted(session.anchors))
    vectors.append(torch.as_tensor(gesture_vector, dtype=torch.float32))
    positions.append((int(gesture_position[0]), int(gesture_position[1])))
    inputs = UserInputSet(
        torch.stack(vectors), torch.tensor(positions, dtype=torch.long)
    )
    inputs.validate_positions(session.image_resolution)
    return inputs, float(alpha)

"""Latent transformer: encoder over user inputs, decoder over W+ codes.

Encoder tokens fuse a projected motion vector with a projected generator
feature sampled at the annotated pixel; the encoder carries no positional
signal of its own, so its output is equivariant under input permutation.
The decoder consumes only the trainable per-layer codes (plus learned
per-layer position embeddings), cross-attends to the encoder memory, and a
zero-initialized head maps each decoder output to a latent direction, so an
untrained model is the identity edit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import archive
from .errors import CheckpointError, InputError
from .generator import FeatureGrid


@dataclass(frozen=True)
class UserInputSet:
    """Variable-length set of (3-d motion vector, 2-d pixel position) pairs.

    ``vectors`` is (K, 3) float; ``positions`` is (K, 2) int as (x, y) in
    image pixel coordinates.
    """

    vectors: torch.Tensor
    positions: torch.Tensor

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[1] != 3:
            raise InputError(f"vectors must be (K, 3), got {tuple(self.vectors.shape)}")
        if self.positions.shape != (self.vectors.shape[0], 2):
            raise InputError(f"positions must be (K, 2), got {tuple(self.positions.shape)}")
        if not torch.isfinite(self.vectors).all():
            raise InputError("motion vectors must be finite")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def permuted(self, perm) -> "UserInputSet":
        idx = torch.as_tensor(perm, dtype=torch.long)
        return UserInputSet(self.vectors[idx], self.positions[idx])

    def validate_positions(self, image_resolution: int) -> None:
        pos = self.positions
        bad = ((pos < 0) | (pos >= image_resolution)).any(dim=1)
        if bad.any():
            i = int(bad.nonzero()[0])
            raise InputError(
                f"input {i}: position {tuple(pos[i].tolist())} outside image of size "
                f"{image_resolution}"
            )


@dataclass
class TransformerConfig:
    model_dim: int = 512
    token_dim: int = 256
    heads: int = 8
    layers: int = 6
    feed_forward_dim: int | None = None  # defaults to 4 * model_dim
    latent_dim: int = 512
    feature_channels: int = 512
    trainable_layer_indices: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    use_style_features: bool = True
    use_position_embeddings: bool = True

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise InputError("model_dim must be divisible by heads")
        if len(self.trainable_layer_indices) == 0:
            raise InputError("trainable_layer_indices must be non-empty")
        if self.feed_forward_dim is None:
            self.feed_forward_dim = 4 * self.model_dim

    def to_dict(self) -> dict:
        return {
            "model_dim": self.model_dim,
            "token_dim": self.token_dim,
            "heads": self.heads,
            "layers": self.layers,
            "feed_forward_dim": self.feed_forward_dim,
            "latent_dim": self.latent_dim,
            "feature_channels": self.feature_channels,
            "trainable_layer_indices": list(self.trainable_layer_indices),
            "use_style_features": self.use_style_features,
            "use_position_embeddings": self.use_position_embeddings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        d = dict(d)
        d["trainable_layer_indices"] = tuple(d["trainable_layer_indices"])
        return cls(**d)


def sample_feature(features: FeatureGrid, position, image_resolution: int) -> torch.Tensor:
    """Nearest-cell lookup: pixel (x, y) maps to cell floor(p * grid / res)."""
    x, y = int(position[0]), int(position[1])
    if not (0 <= x < image_resolution and 0 <= y < image_resolution):
        raise InputError(f"position ({x}, {y}) outside image of size {image_resolution}")
    g = features.grid_size
    cx = x * g // image_resolution
    cy = y * g // image_resolution
    return features.activations[cy, cx]


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, q_in, kv_in):
        def split(t):
            n, d = t.shape
            return t.reshape(n, self.heads, d // self.heads).transpose(0, 1)

        q = split(self.to_q(q_in))
        k = split(self.to_k(kv_in))
        v = split(self.to_v(kv_in))
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(q_in.shape[0], -1)
        return self.proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        return self.net(x)


class EncoderLayer(nn.Module):
    """PreNorm self-attention + GELU feed-forward."""

    def __init__(self, dim, heads, ff_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        x = x + self.ff(self.norm2(x))
        return x


class DecoderLayer(nn.Module):
    """PreNorm self-attention, cross-attention over encoder memory, feed-forward."""

    def __init__(self, dim, heads, ff_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim)

    def forward(self, x, memory):
        h = self.norm1(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm2(x), memory)
        x = x + self.ff(self.norm3(x))
        return x


class LatentTransformer(nn.Module):
    """Maps (w_before, user inputs, generator features) to per-layer directions."""

    def __init__(self, config: TransformerConfig, init_seed: int = 0):
        super().__init__()
        self.config = config
        torch.manual_seed(init_seed)
        c = config
        self.motion_proj = nn.Linear(3, c.token_dim)
        self.feature_proj = nn.Linear(c.feature_channels, c.token_dim)
        self.fuse = nn.Linear(2 * c.token_dim, c.model_dim)
        self.encoder = nn.ModuleList(
            EncoderLayer(c.model_dim, c.heads, c.feed_forward_dim) for _ in range(c.layers)
        )
        self.encoder_norm = nn.LayerNorm(c.model_dim)
        self.latent_proj = nn.Linear(c.latent_dim, c.model_dim)
        self.position_embeddings = nn.Parameter(
            0.02 * torch.randn(len(c.trainable_layer_indices), c.model_dim)
        )
        self.decoder = nn.ModuleList(
            DecoderLayer(c.model_dim, c.heads, c.feed_forward_dim) for _ in range(c.layers)
        )
        self.decoder_norm = nn.LayerNorm(c.model_dim)
        # Zero init: the untrained model is the identity edit.
        self.head = nn.Linear(c.model_dim, c.latent_dim)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def encode_user_inputs(self, inputs: UserInputSet, features: FeatureGrid) -> torch.Tensor:
        """Return the (K, model_dim) encoder memory, row-aligned with the inputs."""
        if len(inputs) < 1:
            raise InputError("at least one user input is required")
        inputs.validate_positions(features.image_resolution)
        motion = self.motion_proj(inputs.vectors.float())
        if self.config.use_style_features:
            feats = torch.stack(
                [
                    sample_feature(features, p, features.image_resolution)
                    for p in inputs.positions
                ]
            ).to(motion.dtype)
        else:
            # Ablation: the model cannot see annotated positions at all.
            feats = torch.zeros(
                len(inputs), self.config.feature_channels, dtype=motion.dtype
            )
        tokens = self.fuse(torch.cat([motion, self.feature_proj(feats)], dim=-1))
        for layer in self.encoder:
            tokens = layer(tokens)
        return self.encoder_norm(tokens)

    def estimate_directions(
        self, w_before: torch.Tensor, inputs: UserInputSet, features: FeatureGrid
    ) -> torch.Tensor:
        """Directions (T, latent_dim) aligned with trainable_layer_indices."""
        idx = torch.as_tensor(self.config.trainable_layer_indices, dtype=torch.long)
        if w_before.ndim != 2 or int(idx.max()) >= w_before.shape[0]:
            raise InputError(
                f"latent sequence of shape {tuple(w_before.shape)} does not cover "
                f"trainable layer indices {self.config.trainable_layer_indices}"
            )
        memory = self.encode_user_inputs(inputs, features)
        queries = self.latent_proj(w_before[idx].to(memory.dtype))
        if self.config.use_position_embeddings:
            queries = queries + self.position_embeddings
        for layer in self.decoder:
            queries = layer(queries, memory)
        return self.head(self.decoder_norm(queries))

    def transform(
        self,
        w_before: torch.Tensor,
        inputs: UserInputSet,
        alpha: float,
        features: FeatureGrid,
    ) -> torch.Tensor:
        """w_before + alpha * f(w_before, inputs) on trainable layers only."""
        if not math.isfinite(alpha):
            raise InputError("alpha must be finite")
        directions = self.estimate_directions(w_before, inputs, features)
        out = w_before.clone()
        idx = list(self.config.trainable_layer_indices)
        out[idx] = out[idx] + alpha * directions.to(out.dtype)
        return out

    # -- checkpointing -------------------------------------------------------

    def save_weights(self, path) -> None:
        tensors = {name: p.detach().numpy() for name, p in self.named_parameters()}
        archive.save_archive(path, "transformer", self.config.to_dict(), tensors)

    @classmethod
    def load_weights(cls, path) -> "LatentTransformer":
        kind, config_dict, tensors = archive.load_archive(path)
        if kind != "transformer":
            raise CheckpointError(f"{path}: archive kind {kind!r}, expected 'transformer'")
        model = cls(TransformerConfig.from_dict(config_dict))
        expected = {name: tuple(p.shape) for name, p in model.named_parameters()}
        archive.expect_tensors(tensors, expected, str(path))
        with torch.no_grad():
            for name, param in model.named_parameters():
                param.copy_(torch.from_numpy(tensors[name]))
        return model

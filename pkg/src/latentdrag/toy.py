"""Desk-scale generator fixtures.

Tests and demos need a generator whose output layout responds coherently to
latent changes, so that flow between perturbed renders carries real motion.
This module procedurally defines such a target (one colored blob per
trainable layer, with position and size driven by a fixed projection of that
layer's code) and provides a minimal trainer that fits the toy synthesis
network to it. The mapping network stays frozen: with a narrow
``mapping_hidden`` the mapped latents live on a low-dimensional manifold, so
blob motion pins down most of a perturbation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .generator import Generator, GeneratorConfig

# One RGB color per driven layer, roughly saturated and distinct.
PALETTE = np.array(
    [
        [1.0, -0.6, -0.6],
        [-0.6, 1.0, -0.6],
        [-0.6, -0.6, 1.0],
        [1.0, 1.0, -0.7],
        [1.0, -0.7, 1.0],
        [-0.7, 1.0, 1.0],
    ],
    dtype=np.float32,
)

NUM_BLOBS = 6


def _layout_projection(latent_dim: int, seed: int = 1234) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(NUM_BLOBS, 3, latent_dim)) / np.sqrt(latent_dim)
    return torch.from_numpy(q.astype(np.float32))


def blob_params(w_seq: torch.Tensor, projection: torch.Tensor) -> torch.Tensor:
    """Per-blob (cx, cy, radius) from the first NUM_BLOBS layer codes.

    ``w_seq`` is (..., L, D); returns (..., NUM_BLOBS, 3) with centers in
    pixels of a 32x32 canvas.
    """
    # Mild squashing: keep typical codes away from tanh saturation so blob
    # motion stays responsive to latent perturbations.
    u = torch.tanh(torch.einsum("...ld,lkd->...lk", w_seq[..., :NUM_BLOBS, :], projection) * 0.7)
    # Fixed per-layer home positions on a ring keep the blobs apart, so local
    # motion is attributable to a single layer's code.
    angles = torch.arange(NUM_BLOBS, dtype=torch.float32) * (2.0 * np.pi / NUM_BLOBS)
    cx = 16.0 + 8.5 * torch.cos(angles) + 6.0 * u[..., 0]
    cy = 16.0 + 8.5 * torch.sin(angles) + 6.0 * u[..., 1]
    r = 2.4 + 0.9 * u[..., 2]
    return torch.stack([cx, cy, r], dim=-1)


def target_image(w_seq: torch.Tensor, projection: torch.Tensor, resolution: int = 32) -> torch.Tensor:
    """Procedural layout target: smooth background plus NUM_BLOBS colored blobs."""
    batched = w_seq.ndim == 3
    w = w_seq if batched else w_seq[None]
    b = w.shape[0]
    params = blob_params(w, projection)  # (b, NUM_BLOBS, 3)
    ys, xs = torch.meshgrid(
        torch.arange(resolution, dtype=torch.float32),
        torch.arange(resolution, dtype=torch.float32),
        indexing="ij",
    )
    bg = 0.15 * torch.sin(xs * 0.7) * torch.cos(ys * 0.5) - 0.55
    img = bg[None, :, :, None].repeat(b, 1, 1, 3).clone()
    palette = torch.from_numpy(PALETTE)
    for l in range(NUM_BLOBS):
        cx = params[:, l, 0][:, None, None]
        cy = params[:, l, 1][:, None, None]
        r = params[:, l, 2][:, None, None]
        blob = torch.exp(-((xs[None] - cx) ** 2 + (ys[None] - cy) ** 2) / (r ** 2))
        img = img + blob[..., None] * palette[l]
    img = torch.clamp(img, -0.95, 0.95)
    return img if batched else img[0]


def _synthesize_batch(gen: Generator, w: torch.Tensor) -> torch.Tensor:
    """Differentiable batched synthesis; w is (B, L, D), output (B, H, W, 3)."""
    x = gen.const[None].expand(w.shape[0], -1, -1, -1)
    for i, block in enumerate(gen.blocks):
        x = block(x, w[:, 2 * i], w[:, 2 * i + 1], None)
    return torch.tanh(gen.to_rgb(x)).permute(0, 2, 3, 1)


def sample_layout_codes(gen: Generator, w_bar: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Latent sequences covering the truncate-then-perturb usage region."""
    cfg = gen.config
    seed = int(rng.integers(2**31 - 1))
    z = gen.sample_z(seed, cfg.num_wplus + 1)
    w_all = gen.map_z_to_w(z)
    psi = float(rng.uniform(0.0, 1.0))
    base = gen.truncate(w_all[0], w_bar, psi)
    t = torch.from_numpy(rng.uniform(0.0, 0.5, size=(cfg.num_wplus, 1)).astype(np.float32))
    return base[None] - t * (w_all[1:] - base[None])


def pretrain_toy_generator(
    seed: int = 7,
    steps: int = 1500,
    batch: int = 12,
    lr: float = 2e-3,
    config: GeneratorConfig | None = None,
) -> Generator:
    """Fit the toy synthesis network to the procedural blob layout."""
    cfg = config or GeneratorConfig.toy()
    gen = Generator(cfg, init_seed=seed)
    projection = _layout_projection(cfg.latent_dim)
    for p in gen.mapping.parameters():
        p.requires_grad_(False)
    params = [p for p in gen.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    w_bar = gen.average_latent(256, seed=seed)
    for step in range(steps):
        w = torch.stack([sample_layout_codes(gen, w_bar, rng) for _ in range(batch)])
        target = target_image(w, projection, cfg.output_resolution)
        out = _synthesize_batch(gen, w)
        loss = F.mse_loss(out, target)
        opt.zero_grad()
        loss.backward()
        opt.step()
    gen.eval()
    return gen


def get_toy_generator(cache_path: str | Path | None = None, seed: int = 7, steps: int = 1500) -> Generator:
    """Pretrained toy generator, cached as a checkpoint archive when a path is given."""
    if cache_path is not None:
        cache_path = Path(cache_path)
        if cache_path.exists():
            return Generator.load_weights(cache_path).eval()
    gen = pretrain_toy_generator(seed=seed, steps=steps)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        gen.save_weights(cache_path)
    return gen

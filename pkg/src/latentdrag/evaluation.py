"""Synthetic benchmark, metrics, and closed-form baselines.

Triplets (w_before, pseudo inputs, w_after) are generated the same way as
training pairs but from a disjoint seed namespace, with K pixels sampled
uniformly from the valid flow cells. Methods map a triplet to estimated
latents; metrics compare the renders of the estimate and the ground truth.
The baseline discovers latent directions by singular value decomposition of
the stacked style-affine weights and searches them greedily or randomly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .errors import InputError
from .flow import Normalizers, normalize, sample_pair
from .transformer import UserInputSet

EVAL_SEED_OFFSET = 0x5EED_0FF5  # keeps benchmark draws disjoint from training


@dataclass
class Triplet:
    w_before: torch.Tensor
    inputs: UserInputSet
    w_after: torch.Tensor

    @property
    def k(self) -> int:
        return len(self.inputs)


@dataclass
class MetricReport:
    method: str
    k: int
    n: int
    mse: float
    perceptual: float
    fid: float | None
    fingerprint: str

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "n": self.n,
            "mse": self.mse,
            "perceptual": self.perceptual,
            "fid": self.fid,
            "fingerprint": self.fingerprint,
        }


@dataclass
class SeFaConfig:
    k: int = 50
    range_min: float = -3.0
    range_max: float = 3.0
    grid_points: int = 11
    random_trials: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be >= 1")
        if self.grid_points < 2:
            raise InputError("grid_points must be >= 2")
        if self.random_trials < 1:
            raise InputError("random_trials must be >= 1")

    @property
    def grid_values(self) -> np.ndarray:
        return np.linspace(self.range_min, self.range_max, self.grid_points)


# -- metrics -------------------------------------------------------------------


def _check_images(img_a, img_b):
    a = torch.as_tensor(img_a, dtype=torch.float32)
    b = torch.as_tensor(img_b, dtype=torch.float32)
    if a.shape != b.shape:
        raise InputError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def mse(img_a, img_b) -> float:
    a, b = _check_images(img_a, img_b)
    return float(((a - b) ** 2).mean())


def perceptual(img_a, img_b, levels: int = 4) -> float:
    """Multi-scale proxy: mean per-level MSE over a Gaussian pyramid."""
    a, b = _check_images(img_a, img_b)
    a_np = a.numpy()
    b_np = b.numpy()
    total = 0.0
    for level in range(levels):
        total += float(((a_np - b_np) ** 2).mean())
        if level + 1 < levels:
            a_np = ndimage.gaussian_filter(a_np, sigma=(1.0, 1.0, 0.0))[::2, ::2]
            b_np = ndimage.gaussian_filter(b_np, sigma=(1.0, 1.0, 0.0))[::2, ::2]
    return total / levels


# -- benchmark generation --------------------------------------------------------


def generate_benchmark(
    generator,
    backend,
    norms: Normalizers,
    n: int,
    k: int,
    seed: int,
    psi: float = 0.3,
    phi: float = 0.1,
    layer_mask=None,
    max_attempts_per_triplet: int = 16,
) -> list[Triplet]:
    """n triplets with exactly k randomly chosen valid flow pixels each."""
    if n < 1 or k < 1:
        raise InputError("n and k must be >= 1")
    w_bar = generator.average_latent(256, seed=seed)
    triplets = []
    base = EVAL_SEED_OFFSET + seed * 1_000_003
    attempt = 0
    while len(triplets) < n:
        if attempt >= n * max_attempts_per_triplet:
            raise InputError(
                f"benchmark generation stalled: {len(triplets)}/{n} triplets after "
                f"{attempt} attempts (flow repeatedly failed to yield {k} valid pixels)"
            )
        pair_seed = base + attempt
        attempt += 1
        w_before, w_after = sample_pair(
            generator, w_bar, psi, phi, seed=pair_seed, layer_mask=layer_mask
        )
        field = normalize(
            backend.estimate(generator.synthesize(w_before), generator.synthesize(w_after)),
            norms,
        )
        ys, xs = np.nonzero(field.valid)
        if len(ys) < k:
            continue  # discard the pair: not enough valid flow
        rng = np.random.default_rng(pair_seed)
        chosen = rng.choice(len(ys), size=k, replace=False)
        vectors = torch.from_numpy(
            field.values[ys[chosen], xs[chosen]].astype(np.float32)
        )
        positions = torch.tensor(
            np.stack([xs[chosen], ys[chosen]], axis=1), dtype=torch.long
        )
        triplets.append(Triplet(w_before, UserInputSet(vectors, positions), w_after))
    return triplets


def triplet_fingerprint(triplets: list[Triplet]) -> str:
    """Digest of the triplet set, used to refuse cross-set comparisons."""
    h = hashlib.sha256()
    for t in triplets:
        h.update(t.w_before.numpy().tobytes())
        h.update(t.w_after.numpy().tobytes())
        h.update(t.inputs.vectors.numpy().tobytes())
        h.update(t.inputs.positions.numpy().tobytes())
    return h.hexdigest()[:16]


# -- methods ---------------------------------------------------------------------


def ours_method(transformer, generator, alpha: float = 1.0):
    """Predicts latents with the latent transformer at the given strength."""

    def method(triplet: Triplet) -> torch.Tensor:
        features = generator.extract_feature_map(triplet.w_before)
        with torch.no_grad():
            return transformer.transform(
                triplet.w_before, triplet.inputs, alpha, features
            )

    return method


def identity_method(triplet: Triplet) -> torch.Tensor:
    return triplet.w_before


def oracle_method(triplet: Triplet) -> torch.Tensor:
    return triplet.w_after


def subset_method(base_method, k: int, seed: int = 0):
    """Evaluate a method on a fixed-size random subset of each triplet's inputs."""
    from .flow import random_subset

    def method(triplet: Triplet) -> torch.Tensor:
        if len(triplet.inputs) <= k:
            return base_method(triplet)
        sub = random_subset(triplet.inputs, k, seed=seed)
        return base_method(Triplet(triplet.w_before, sub, triplet.w_after))

    return method


def evaluate_method(
    method,
    triplets: list[Triplet],
    generator,
    name: str = "method",
    k: int | None = None,
    distribution_metric=None,
) -> MetricReport:
    """Mean MSE and perceptual distance of a method's renders vs ground truth.

    ``distribution_metric``, when supplied, is called with the two render
    lists and its scalar lands in the report's ``fid`` slot (adapter for an
    external embedding-based metric).
    """
    if not triplets:
        raise InputError("triplet list is empty")
    mses = []
    percs = []
    est_images = []
    ref_images = []
    for triplet in triplets:
        w_hat = method(triplet)
        est = generator.synthesize(w_hat)
        ref = generator.synthesize(triplet.w_after)
        mses.append(mse(est, ref))
        percs.append(perceptual(est, ref))
        if distribution_metric is not None:
            est_images.append(est)
            ref_images.append(ref)
    fid = (
        float(distribution_metric(est_images, ref_images))
        if distribution_metric is not None
        else None
    )
    return MetricReport(
        method=name,
        k=k if k is not None else triplets[0].k,
        n=len(triplets),
        mse=float(np.mean(mses)),
        perceptual=float(np.mean(percs)),
        fid=fid,
        fingerprint=triplet_fingerprint(triplets),
    )


# -- SeFa baseline -----------------------------------------------------------------


def sefa_directions(generator, k: int, num_layers: int = 6) -> torch.Tensor:
    """Top-k right singular directions of the stacked style-affine weights.

    Only the affine matrices feeding the first ``num_layers`` per-layer codes
    (the deepest blocks) enter the stack, mirroring where layout is
    controlled.
    """
    if k > generator.config.latent_dim:
        raise InputError(
            f"k={k} exceeds latent dimension {generator.config.latent_dim}"
        )
    mats = []
    for conv in generator.style_convs()[:num_layers]:
        mats.append(conv.affine.weight.detach().numpy())
    stacked = np.concatenate(mats, axis=0)
    _, _, vt = np.linalg.svd(stacked, full_matrices=False)
    return torch.from_numpy(np.ascontiguousarray(vt[:k])).float()


def _perturbed(w_before: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    return w_before + delta[None, :]


def greedy_search(
    generator,
    directions: torch.Tensor,
    w_before: torch.Tensor,
    target_img: torch.Tensor,
    config: SeFaConfig | None = None,
):
    """Exhaustive scan over every (direction, grid value) pair.

    Returns (direction index, parameter, best latents, best image, metric).
    Ties resolve to the lowest (index, value).
    """
    config = config or SeFaConfig()
    best = None
    for i in range(directions.shape[0]):
        for value in config.grid_values:
            w = _perturbed(w_before, float(value) * directions[i])
            img = generator.synthesize(w)
            metric = perceptual(img, target_img)
            key = (metric, i, float(value))
            if best is None or key < best[0]:
                best = (key, w, img)
    (metric, index, value), w, img = best
    return index, value, w, img, metric


def random_search(
    generator,
    directions: torch.Tensor,
    w_before: torch.Tensor,
    target_img: torch.Tensor,
    config: SeFaConfig | None = None,
    seed: int = 0,
):
    """Joint uniform draws over all direction coefficients; keeps the best.

    Returns (best latents, best image, metric).
    """
    config = config or SeFaConfig()
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(config.random_trials):
        coeffs = rng.uniform(
            config.range_min, config.range_max, size=directions.shape[0]
        ).astype(np.float32)
        delta = torch.from_numpy(coeffs) @ directions
        w = _perturbed(w_before, delta)
        img = generator.synthesize(w)
        metric = perceptual(img, target_img)
        if best is None or metric < best[0]:
            best = (metric, w, img)
    metric, w, img = best
    return w, img, metric


def sefa_method(generator, directions: torch.Tensor, mode: str = "greedy", config=None, seed: int = 0):
    """Adapter exposing the SeFa searches under the method interface."""

    def method(triplet: Triplet) -> torch.Tensor:
        target = generator.synthesize(triplet.w_after)
        if mode == "greedy":
            _, _, w, _, _ = greedy_search(
                generator, directions, triplet.w_before, target, config
            )
        elif mode == "random":
            w, _, _ = random_search(
                generator, directions, triplet.w_before, target, config, seed=seed
            )
        else:
            raise InputError(f"unknown SeFa mode {mode!r}")
        return w

    return method


# -- inverted-code editing (average-latent mode) -------------------------------------


def edit_inverted(transformer, generator, inverted, inputs, alpha, w_bar):
    """Directions from the broadcast average latent, applied to inverted codes."""
    base = generator.broadcast(w_bar)
    features = generator.extract_feature_map(base)
    with torch.no_grad():
        directions = transformer.estimate_directions(base, inputs, features)
    out = torch.as_tensor(inverted, dtype=torch.float32).clone()
    idx = list(transformer.config.trainable_layer_indices)
    out[idx] = out[idx] + alpha * directions
    return out


# -- reporting --------------------------------------------------------------------


def format_table(reports: list[MetricReport]) -> str:
    header = f"{'method':<20} {'K':>5} {'n':>5} {'MSE':>12} {'perceptual':>12} {'FID':>10}"
    lines = [header, "-" * len(header)]
    for r in reports:
        fid = f"{r.fid:.6f}" if r.fid is not None else "-"
        lines.append(
            f"{r.method:<20} {r.k:>5} {r.n:>5} {r.mse:>12.6f} {r.perceptual:>12.6f} {fid:>10}"
        )
    return "\n".join(lines) + "\n"


def emit_report(reports: list[MetricReport], out_dir) -> dict[str, Path]:
    """Write report.json, report.txt, and curves.csv; refuses mixed triplet sets."""
    if not reports:
        raise InputError("at least one report is required")
    fingerprints = {r.fingerprint for r in reports}
    if len(fingerprints) > 1:
        raise InputError(
            f"reports cover different triplet sets {sorted(fingerprints)}; "
            "comparison would be unfair"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "report.json",
        "txt": out_dir / "report.txt",
        "csv": out_dir / "curves.csv",
    }
    with open(paths["json"], "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["txt"].write_text(format_table(reports))
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "k", "mse", "perceptual"])
        for r in sorted(reports, key=lambda r: (r.method, r.k)):
            writer.writerow([r.method, r.k, r.mse, r.perceptual])
    return paths


def load_report(path) -> list[MetricReport]:
    with open(path) as fh:
        rows = json.load(fh)
    return [MetricReport(**row) for row in rows]

"""Pseudo-user-input generation from image pairs.

Dense forward flow plus optical expansion between two rendered images, a
brute-force block-matching backend that doubles as a test oracle, normalizer
calibration, and grid subsampling into user-input sets.

Expansion convention: ``z`` stores (local scale ratio − 1), so z = 0 means no
depth change and a zero motion vector is depth-neutral.
"""

from __future__ import annotations

import struct
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .errors import CalibrationError, InputError
from .transformer import UserInputSet

FLOW_MAGIC = b"LDFLOW01"


@dataclass
class FlowField:
    """Per-pixel (x, y, z) motion over H×W plus a validity mask."""

    values: np.ndarray  # (H, W, 3) float32
    valid: np.ndarray  # (H, W) bool
    backend: str
    normalized: bool = False

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise InputError(f"flow values must be (H, W, 3), got {self.values.shape}")
        if self.valid.shape != self.values.shape[:2]:
            raise InputError("validity mask shape must match flow values")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    def save(self, path) -> None:
        name = self.backend.encode("utf-8")
        h, w = self.resolution
        with open(path, "wb") as fh:
            fh.write(FLOW_MAGIC)
            fh.write(struct.pack("<IIBH", h, w, int(self.normalized), len(name)))
            fh.write(name)
            fh.write(np.ascontiguousarray(self.values, dtype="<f4").tobytes())
            fh.write(np.packbits(self.valid.reshape(-1)).tobytes())

    @classmethod
    def load(cls, path) -> "FlowField":
        data = Path(path).read_bytes()
        if data[:8] != FLOW_MAGIC:
            raise InputError(f"{path}: not a flow field file")
        h, w, normalized, name_len = struct.unpack("<IIBH", data[8:19])
        off = 19
        backend = data[off : off + name_len].decode("utf-8")
        off += name_len
        count = h * w * 3
        values = np.frombuffer(data[off : off + 4 * count], dtype="<f4").reshape(h, w, 3)
        off += 4 * count
        nbytes = (h * w + 7) // 8
        bits = np.unpackbits(np.frombuffer(data[off : off + nbytes], dtype=np.uint8))
        valid = bits[: h * w].reshape(h, w).astype(bool)
        return cls(values.copy(), valid, backend, bool(normalized))


@dataclass(frozen=True)
class Normalizers:
    """Scales dividing flow (sigma_f) and expansion (sigma_e) components."""

    sigma_f: float
    sigma_e: float

    def __post_init__(self):
        if not (self.sigma_f > 0 and self.sigma_e > 0):
            raise InputError("normalizers must be positive")


def _to_numpy(img) -> np.ndarray:
    arr = img.detach().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
    if arr.ndim != 3:
        raise InputError(f"image must be (H, W, C), got shape {arr.shape}")
    return arr.astype(np.float32)


class BlockMatchingBackend:
    """Exhaustive SSD block matching plus discrete-scale expansion search.

    Exact on noiseless integer translations within the search radius (the
    zero-SSD match wins and subpixel refinement is skipped at zero residual),
    which makes it usable as an oracle. Displacements are tried in order of
    increasing magnitude so ties resolve toward the smallest motion.
    """

    name = "block_matching"

    def __init__(
        self,
        block_size: int = 8,
        search_radius: int = 8,
        scales: tuple[float, ...] = (0.8, 0.9, 1.0, 1.1, 1.25),
        subpixel: bool = True,
        max_ssd: float = float("inf"),
    ):
        self.block_size = block_size
        self.search_radius = search_radius
        self.scales = tuple(sorted(scales, key=lambda s: (abs(np.log(s)), s)))
        self.subpixel = subpixel
        self.max_ssd = max_ssd

    def estimate(self, img_a, img_b) -> FlowField:
        a = _to_numpy(img_a)
        b = _to_numpy(img_b)
        if a.shape != b.shape:
            raise InputError(f"image shapes differ: {a.shape} vs {b.shape}")
        h, w = a.shape[:2]
        r = self.search_radius
        bs = self.block_size
        area = bs * bs

        disps = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
        disps.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))

        ssd = np.full((len(disps), h, w), np.inf, dtype=np.float32)
        cover = np.zeros((len(disps), h, w), dtype=np.float32)
        for k, (dy, dx) in enumerate(disps):
            ay0, ay1 = max(0, -dy), h - max(0, dy)
            ax0, ax1 = max(0, -dx), w - max(0, dx)
            if ay0 >= ay1 or ax0 >= ax1:
                continue
            diff = a[ay0:ay1, ax0:ax1] - b[ay0 + dy : ay1 + dy, ax0 + dx : ax1 + dx]
            d2 = np.zeros((h, w), dtype=np.float32)
            d2[ay0:ay1, ax0:ax1] = (diff * diff).sum(axis=-1)
            ind = np.zeros((h, w), dtype=np.float32)
            ind[ay0:ay1, ax0:ax1] = 1.0
            # Box sums over the matching window; a window is usable only when
            # fully covered on both images.
            s = ndimage.uniform_filter(d2, size=bs, mode="constant") * area
            n = ndimage.uniform_filter(ind, size=bs, mode="constant") * area
            full = n > area - 0.5
            ssd[k][full] = s[full]
            cover[k] = full

        best_k = np.argmin(ssd, axis=0)
        best_ssd = np.take_along_axis(ssd, best_k[None], axis=0)[0]
        valid = np.isfinite(best_ssd) & (best_ssd <= self.max_ssd)

        disp_arr = np.asarray(disps, dtype=np.float32)
        flow_y = disp_arr[best_k, 0]
        flow_x = disp_arr[best_k, 1]

        if self.subpixel:
            flow_x, flow_y = self._refine(ssd, disps, best_k, best_ssd, flow_x, flow_y)

        z = self._expansion(a, b, flow_x, flow_y, valid)

        values = np.stack([flow_x, flow_y, z], axis=-1).astype(np.float32)
        values[~valid] = 0.0
        return FlowField(values=values, valid=valid, backend=self.name)

    def _refine(self, ssd, disps, best_k, best_ssd, flow_x, flow_y):
        """Parabolic subpixel refinement, skipped at exact (zero-SSD) matches."""
        index = {d: i for i, d in enumerate(disps)}
        h, w = best_k.shape
        iy, ix = np.indices((h, w))
        fx = flow_x.copy()
        fy = flow_y.copy()
        for axis in (0, 1):  # 0: y, 1: x
            lo = np.full((h, w), np.inf, dtype=np.float32)
            hi = np.full((h, w), np.inf, dtype=np.float32)
            for k, (dy, dx) in enumerate(disps):
                m = best_k == k
                if not m.any():
                    continue
                dm = (dy - 1, dx) if axis == 0 else (dy, dx - 1)
                dp = (dy + 1, dx) if axis == 0 else (dy, dx + 1)
                if dm in index:
                    lo[m] = ssd[index[dm]][m]
                if dp in index:
                    hi[m] = ssd[index[dp]][m]
            # Neighbors at infinity mark grid-edge matches; they are filtered
            # below, so the inf arithmetic here is inconsequential.
            with np.errstate(invalid="ignore"):
                denom = lo - 2.0 * best_ssd + hi
                ok = (
                    np.isfinite(lo)
                    & np.isfinite(hi)
                    & (best_ssd > 1e-12)
                    & (denom > 1e-12)
                )
            offset = np.zeros((h, w), dtype=np.float32)
            offset[ok] = 0.5 * (lo[ok] - hi[ok]) / denom[ok]
            offset = np.clip(offset, -0.5, 0.5)
            if axis == 0:
                fy = fy + offset
            else:
                fx = fx + offset
        return fx, fy

    def _expansion(self, a, b, flow_x, flow_y, valid):
        """Best local scale from a discrete set, as (ratio − 1)."""
        h, w = a.shape[:2]
        half = self.block_size // 2
        offsets = [
            (oy, ox)
            for oy in range(-half, self.block_size - half)
            for ox in range(-half, self.block_size - half)
        ]
        iy, ix = np.indices((h, w))
        by = np.clip(np.rint(iy + flow_y).astype(int), 0, h - 1)
        bx = np.clip(np.rint(ix + flow_x).astype(int), 0, w - 1)

        b_at = {}
        for oy, ox in offsets:
            yy = np.clip(by + oy, 0, h - 1)
            xx = np.clip(bx + ox, 0, w - 1)
            b_at[(oy, ox)] = b[yy, xx]

        best_cost = np.full((h, w), np.inf, dtype=np.float32)
        best_scale = np.ones((h, w), dtype=np.float32)
        for s in self.scales:
            cost = np.zeros((h, w), dtype=np.float32)
            for oy, ox in offsets:
                # output(p) = a(p + o/s): ndimage.shift by t gives input(p - t).
                shifted = ndimage.shift(
                    a, (-oy / s, -ox / s, 0), order=1, mode="nearest", prefilter=False
                )
                diff = shifted - b_at[(oy, ox)]
                cost += (diff * diff).sum(axis=-1)
            better = cost < best_cost - 1e-12
            best_cost[better] = cost[better]
            best_scale[better] = s
        z = best_scale - 1.0
        z[~valid] = 0.0
        return z


class SubprocessFlowBackend:
    """Adapter for an external flow estimator via file exchange.

    The command is invoked as ``cmd... <a.npy> <b.npy> <out.flow>`` where the
    inputs are float32 (H, W, 3) arrays and the output must be a serialized
    FlowField (see FlowField.save).
    """

    def __init__(self, command: list[str], name: str = "external"):
        self.command = list(command)
        self.name = name

    def estimate(self, img_a, img_b) -> FlowField:
        a = _to_numpy(img_a)
        b = _to_numpy(img_b)
        if a.shape != b.shape:
            raise InputError(f"image shapes differ: {a.shape} vs {b.shape}")
        with tempfile.TemporaryDirectory() as tmp:
            pa, pb, pout = (Path(tmp) / n for n in ("a.npy", "b.npy", "out.flow"))
            np.save(pa, a)
            np.save(pb, b)
            subprocess.run(self.command + [str(pa), str(pb), str(pout)], check=True)
            field = FlowField.load(pout)
        return replace(field, backend=self.name)


def estimate_flow(img_a, img_b, backend) -> FlowField:
    """Forward flow img_a → img_b using the given backend."""
    return backend.estimate(img_a, img_b)


def normalize(flow: FlowField, norms: Normalizers) -> FlowField:
    """Divide (x, y) by sigma_f and z by sigma_e. Refuses double application."""
    if flow.normalized:
        raise InputError("flow field is already normalized")
    values = flow.values.copy()
    values[..., 0] /= norms.sigma_f
    values[..., 1] /= norms.sigma_f
    values[..., 2] /= norms.sigma_e
    return FlowField(values=values, valid=flow.valid.copy(), backend=flow.backend, normalized=True)


def calibrate(
    generator,
    backend,
    n_pairs: int = 300,
    seed: int = 0,
    psi: float = 0.3,
    phi: float = 0.1,
    layer_mask: list[int] | None = None,
) -> Normalizers:
    """Normalizers from sampled latent pairs: means of per-map maxima."""
    if n_pairs < 1:
        raise InputError("n_pairs must be >= 1")
    w_bar = generator.average_latent(256, seed=seed)
    max_f = []
    max_e = []
    for i in range(n_pairs):
        w_before, w_after = sample_pair(
            generator, w_bar, psi, phi, seed=seed * 1_000_003 + i, layer_mask=layer_mask
        )
        field = backend.estimate(generator.synthesize(w_before), generator.synthesize(w_after))
        if field.valid.any():
            mag = np.hypot(field.values[..., 0], field.values[..., 1])[field.valid]
            exp = np.abs(field.values[..., 2])[field.valid]
            max_f.append(float(mag.max()))
            max_e.append(float(exp.max()))
        else:
            max_f.append(0.0)
            max_e.append(0.0)
    sigma_f = float(np.mean(max_f))
    sigma_e = float(np.mean(max_e))
    if sigma_f <= 0.0:
        raise CalibrationError("all sampled pairs produced zero flow; sigma_f would be 0")
    if sigma_e <= 0.0:
        raise CalibrationError("all sampled pairs produced zero expansion; sigma_e would be 0")
    return Normalizers(sigma_f=sigma_f, sigma_e=sigma_e)


def sample_pair(generator, w_bar, psi, phi, seed, layer_mask=None):
    """One (w_before, w_after) training pair: truncation then per-layer perturbation."""
    z = generator.sample_z(seed)
    w_rand = generator.map_z_to_w(z)[0]
    w_before = generator.broadcast(generator.truncate(w_rand, w_bar, psi))
    w_after = generator.perturb(w_before, phi, seed=seed + 1, layer_mask=layer_mask)
    return w_before, w_after


def subsample(flow: FlowField, grid: int) -> UserInputSet:
    """Sample the field at grid² cell centers, skipping invalid cells."""
    h, w = flow.resolution
    if grid < 1 or grid > min(h, w):
        raise InputError(f"grid {grid} does not map into resolution {h}x{w}")
    sy, sx = h // grid, w // grid
    vectors = []
    positions = []
    for j in range(grid):
        for i in range(grid):
            y = sy // 2 + sy * j
            x = sx // 2 + sx * i
            if not flow.valid[y, x]:
                continue
            vectors.append(flow.values[y, x])
            positions.append((x, y))
    if not vectors:
        return UserInputSet(torch.zeros(0, 3), torch.zeros(0, 2, dtype=torch.long))
    return UserInputSet(
        torch.from_numpy(np.asarray(vectors, dtype=np.float32)),
        torch.tensor(positions, dtype=torch.long),
    )


def random_subset(inputs: UserInputSet, k: int, seed: int) -> UserInputSet:
    """Uniform sample of k items without replacement."""
    n = len(inputs)
    if not 1 <= k <= n:
        raise InputError(f"k={k} out of range for input set of size {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    return inputs.permuted(idx)

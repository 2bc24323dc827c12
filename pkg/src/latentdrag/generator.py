"""Style-based image generator with per-layer latent conditioning.

A faithful-at-small-scale generator: an MLP mapping network from z to w,
followed by a synthesis network of modulated-convolution blocks. Each block
consumes two per-layer latent codes (one per conv), so a config with B
resolution blocks exposes ``num_wplus = 2 * B`` codes. The block whose output
resolution equals ``feature_tap_resolution`` doubles as the semantic feature
tap used to look up annotated pixel positions.

Named weight slots follow a fixed scheme (see ``state_tensors``) so that
externally converted full-scale weights can be dropped into the same archive
format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import archive
from .errors import CheckpointError, ConfigError, InputError


@dataclass
class GeneratorConfig:
    latent_dim: int = 512
    resolutions: tuple[int, ...] = (4, 8, 16, 32, 64, 128, 256)
    channels: tuple[int, ...] = (512, 512, 512, 512, 256, 128, 64)
    mapping_depth: int = 8
    # Hidden width of the mapping MLP; a value below latent_dim confines
    # mapped latents to a low-dimensional manifold (useful at toy scale).
    mapping_hidden: int | None = None
    feature_tap_resolution: int = 64
    feature_tap_fallback: bool = True
    # The printed truncation formula is w̄ − ψ(w_rand − w̄); +1 flips it to the
    # conventional w̄ + ψ(w_rand − w̄).
    truncation_sign: float = -1.0
    use_noise: bool = False

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ConfigError("latent_dim must be positive")
        if len(self.resolutions) != len(self.channels):
            raise ConfigError("resolutions and channels must have equal length")
        if self.resolutions[0] != 4 or any(
            b != 2 * a for a, b in zip(self.resolutions, self.resolutions[1:])
        ):
            raise ConfigError("resolutions must start at 4 and double per block")
        if self.feature_tap_resolution not in self.resolutions and not self.feature_tap_fallback:
            raise ConfigError(
                f"no synthesis block at feature_tap_resolution={self.feature_tap_resolution} "
                "and fallback disabled"
            )

    @property
    def num_wplus(self) -> int:
        return 2 * len(self.resolutions)

    @property
    def output_resolution(self) -> int:
        return self.resolutions[-1]

    @property
    def tap_resolution_actual(self) -> int:
        """Resolution actually tapped; the deepest available when falling back."""
        if self.feature_tap_resolution in self.resolutions:
            return self.feature_tap_resolution
        candidates = [r for r in self.resolutions if r <= self.feature_tap_resolution]
        return candidates[-1] if candidates else self.resolutions[0]

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "resolutions": list(self.resolutions),
            "channels": list(self.channels),
            "mapping_depth": self.mapping_depth,
            "mapping_hidden": self.mapping_hidden,
            "feature_tap_resolution": self.feature_tap_resolution,
            "feature_tap_fallback": self.feature_tap_fallback,
            "truncation_sign": self.truncation_sign,
            "use_noise": self.use_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["resolutions"] = tuple(d["resolutions"])
        d["channels"] = tuple(d["channels"])
        return cls(**d)

    @classmethod
    def toy(cls, latent_dim: int = 64, resolution: int = 32) -> "GeneratorConfig":
        """Small config for tests: 32² output, L=8 by default."""
        resolutions = []
        r = 4
        while r <= resolution:
            resolutions.append(r)
            r *= 2
        channels = tuple(max(16, 96 // (2 ** i)) for i in range(len(resolutions)))
        return cls(
            latent_dim=latent_dim,
            resolutions=tuple(resolutions),
            channels=channels,
            mapping_depth=2,
            mapping_hidden=3,
            feature_tap_resolution=min(64, resolution),
        )


@dataclass
class FeatureGrid:
    """Intermediate synthesis activations used as a semantic lookup table.

    ``activations`` has shape (H, W, C) with H = W = ``tap_resolution``.
    ``requested_resolution`` records the configured tap; ``fallback`` is set
    when the tap substituted the deepest available block.
    """

    activations: torch.Tensor
    image_resolution: int
    requested_resolution: int
    fallback: bool = False

    @property
    def grid_size(self) -> int:
        return self.activations.shape[0]

    @property
    def num_channels(self) -> int:
        return self.activations.shape[-1]


class ModulatedConv2d(nn.Module):
    """Conv2d whose kernel is modulated per-sample by a style vector."""

    def __init__(self, in_channels, out_channels, latent_dim, kernel_size=3, demodulate=True):
        super().__init__()
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kernel_size, kernel_size)
            / math.sqrt(in_channels * kernel_size * kernel_size)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.affine = nn.Linear(latent_dim, in_channels)
        nn.init.normal_(self.affine.weight, std=1.0 / math.sqrt(latent_dim))
        nn.init.ones_(self.affine.bias)
        self.demodulate = demodulate
        self.padding = kernel_size // 2

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        b, c, h, wd = x.shape
        style = self.affine(w)  # (b, in)
        weight = self.weight[None] * style[:, None, :, None, None]
        if self.demodulate:
            denom = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
            weight = weight * denom
        # Grouped conv folds the batch into groups so each sample gets its kernel.
        weight = weight.reshape(b * weight.shape[1], c, *weight.shape[3:])
        out = F.conv2d(x.reshape(1, b * c, h, wd), weight, padding=self.padding, groups=b)
        out = out.reshape(b, -1, h, wd)
        return out + self.bias[None, :, None, None]


class SynthesisBlock(nn.Module):
    """Two modulated convs at one resolution; upsamples its input first."""

    def __init__(self, in_channels, out_channels, latent_dim, upsample):
        super().__init__()
        self.upsample = upsample
        self.conv1 = ModulatedConv2d(in_channels, out_channels, latent_dim)
        self.conv2 = ModulatedConv2d(out_channels, out_channels, latent_dim)

    def forward(self, x, w1, w2, noise=None):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.leaky_relu(self.conv1(x, w1), 0.2)
        if noise is not None:
            x = x + noise[0]
        x = F.leaky_relu(self.conv2(x, w2), 0.2)
        if noise is not None:
            x = x + noise[1]
        return x


class Generator(nn.Module):
    """Mapping network plus modulated-conv synthesis with a feature tap."""

    def __init__(self, config: GeneratorConfig, init_seed: int = 0):
        super().__init__()
        self.config = config
        torch.manual_seed(init_seed)
        dim = config.latent_dim
        hidden = config.mapping_hidden or dim
        widths = [dim] + [hidden] * max(0, config.mapping_depth - 1) + [dim]
        layers = []
        for a, b in zip(widths, widths[1:]):
            layers += [nn.Linear(a, b), nn.LeakyReLU(0.2)]
        self.mapping = nn.Sequential(*layers)
        for m in self.mapping:
            if isinstance(m, nn.Linear):
                nn.init.orthogonal_(m.weight, gain=math.sqrt(2.0))
                nn.init.zeros_(m.bias)
        self.const = nn.Parameter(torch.randn(config.channels[0], 4, 4))
        blocks = []
        prev = config.channels[0]
        for i, ch in enumerate(config.channels):
            blocks.append(SynthesisBlock(prev, ch, dim, upsample=(i > 0)))
            prev = ch
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(prev, 3, kernel_size=1)

    # -- latent-space operations -------------------------------------------

    def map_z_to_w(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.config.latent_dim:
            raise InputError(
                f"z has length {z.shape[-1]}, expected latent_dim={self.config.latent_dim}"
            )
        with torch.no_grad():
            return self.mapping(z.float())

    def sample_z(self, seed: int, n: int = 1) -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(n, self.config.latent_dim, generator=gen)

    def average_latent(self, n_samples: int, seed: int = 0) -> torch.Tensor:
        if n_samples < 1:
            raise InputError("n_samples must be >= 1")
        z = self.sample_z(seed, n_samples)
        return self.map_z_to_w(z).mean(dim=0)

    def truncate(self, w_rand: torch.Tensor, w_bar: torch.Tensor, psi: float) -> torch.Tensor:
        """Truncation toward the average latent, literal printed formula."""
        if w_rand.shape != w_bar.shape:
            raise InputError(f"shape mismatch: {tuple(w_rand.shape)} vs {tuple(w_bar.shape)}")
        return w_bar + self.config.truncation_sign * psi * (w_rand - w_bar)

    def style_convs(self) -> list[ModulatedConv2d]:
        """Modulated convs in per-layer-code order (two per block, deepest first)."""
        convs = []
        for block in self.blocks:
            convs += [block.conv1, block.conv2]
        return convs

    def broadcast(self, w: torch.Tensor) -> torch.Tensor:
        """Repeat a single w code over all L per-layer slots."""
        return w.expand(self.config.num_wplus, -1).contiguous()

    def perturb(
        self,
        w_before: torch.Tensor,
        phi: float,
        seed: int,
        layer_mask: list[int] | None = None,
    ) -> torch.Tensor:
        """Per-layer perturbation toward independently drawn random latents.

        ``layer_mask`` restricts perturbation to the listed layer indices;
        other codes are held fixed.
        """
        self._check_wplus(w_before)
        L = self.config.num_wplus
        z = self.sample_z(seed, L)
        w_rand = self.map_z_to_w(z)
        w_after = w_before - phi * (w_rand - w_before)
        if layer_mask is not None:
            keep = torch.ones(L, dtype=torch.bool)
            keep[list(layer_mask)] = False
            w_after[keep] = w_before[keep]
        return w_after

    # -- synthesis ----------------------------------------------------------

    def _check_wplus(self, w: torch.Tensor) -> None:
        if w.shape != (self.config.num_wplus, self.config.latent_dim):
            raise InputError(
                f"latent sequence has shape {tuple(w.shape)}, expected "
                f"({self.config.num_wplus}, {self.config.latent_dim})"
            )

    def _noise(self, seed: int | None):
        if not self.config.use_noise:
            return [None] * len(self.blocks)
        gen = torch.Generator().manual_seed(0 if seed is None else seed)
        noises = []
        for res in self.config.resolutions:
            noises.append(
                (
                    0.02 * torch.randn(1, 1, res, res, generator=gen),
                    0.02 * torch.randn(1, 1, res, res, generator=gen),
                )
            )
        return noises

    def _run_synthesis(self, w: torch.Tensor, noise_seed: int | None):
        self._check_wplus(w)
        x = self.const[None]
        taps = {}
        noises = self._noise(noise_seed)
        for i, block in enumerate(self.blocks):
            x = block(x, w[None, 2 * i], w[None, 2 * i + 1], noises[i])
            taps[self.config.resolutions[i]] = x
        img = torch.tanh(self.to_rgb(x))
        return img, taps

    def synthesize(self, w: torch.Tensor, noise_seed: int | None = None) -> torch.Tensor:
        """Render a (H, W, 3) image in [-1, 1] from a W+ latent sequence."""
        with torch.no_grad():
            img, _ = self._run_synthesis(w, noise_seed)
        return img[0].permute(1, 2, 0).contiguous()

    def extract_feature_map(self, w: torch.Tensor, noise_seed: int | None = None) -> FeatureGrid:
        """Tap the synthesis block at ``feature_tap_resolution`` (post-activation)."""
        requested = self.config.feature_tap_resolution
        actual = self.config.tap_resolution_actual
        if actual != requested and not self.config.feature_tap_fallback:
            raise ConfigError(f"no synthesis block at resolution {requested}")
        with torch.no_grad():
            _, taps = self._run_synthesis(w, noise_seed)
        grid = taps[actual][0].permute(1, 2, 0).contiguous()
        return FeatureGrid(
            activations=grid,
            image_resolution=self.config.output_resolution,
            requested_resolution=requested,
            fallback=actual != requested,
        )

    # -- checkpointing -------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: p.detach().numpy() for name, p in self.named_parameters()}

    def save_weights(self, path) -> None:
        archive.save_archive(path, "generator", self.config.to_dict(), self.state_tensors())

    @classmethod
    def load_weights(cls, path) -> "Generator":
        kind, config_dict, tensors = archive.load_archive(path)
        if kind != "generator":
            raise CheckpointError(f"{path}: archive kind {kind!r}, expected 'generator'")
        gen = cls(GeneratorConfig.from_dict(config_dict))
        expected = {name: tuple(p.shape) for name, p in gen.named_parameters()}
        archive.expect_tensors(tensors, expected, str(path))
        with torch.no_grad():
            for name, param in gen.named_parameters():
                param.copy_(torch.from_numpy(tensors[name]))
        return gen

"""Self-supervised training loop on synthetic latent pairs.

Each iteration samples a (w_before, w_after) pair by truncation and per-layer
perturbation, estimates flow and expansion between the two renders, subsamples
the normalized field into pseudo-user inputs, predicts w_after with strength
alpha = 1, and minimizes the mean squared error over the trainable-layer
codes. All per-iteration randomness is derived from (config seed, iteration),
so an interrupted run resumed from a checkpoint continues bit-identically.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CalibrationError, ConfigError, TrainingError
from .flow import Normalizers, normalize, random_subset, sample_pair, subsample

OPTIMIZERS = ("ranger", "adam", "radam")


@dataclass
class TrainConfig:
    psi: float = 0.3
    phi: float = 0.1
    iterations: int = 60000
    batch_size: int = 1
    learning_rate: float = 0.001
    optimizer: str = "ranger"
    flow_grid: int = 16
    train_subset_k: int | None = None
    seed: int = 0
    checkpoint_every: int = 1000
    # Linear learning-rate warmup followed by an optional cosine decay; the
    # rate at any iteration is a pure function of the iteration index, so
    # resumed runs stay bit-identical.
    warmup_iterations: int = 0
    lr_schedule: str = "constant"
    # When set, perturbation is restricted to the trainable layers so the
    # observed motion is attributable to codes the model can actually edit.
    perturb_trainable_only: bool = True

    def __post_init__(self):
        if not (0.0 <= self.psi <= 1.0 and 0.0 <= self.phi <= 1.0):
            raise ConfigError("psi and phi must lie in [0, 1]")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.flow_grid < 1:
            raise ConfigError("flow_grid must be >= 1")
        if self.train_subset_k is not None and self.train_subset_k < 1:
            raise ConfigError("train_subset_k must be >= 1 when set")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.warmup_iterations < 0:
            raise ConfigError("warmup_iterations must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")

    def to_dict(self) -> dict:
        return {
            "psi": self.psi,
            "phi": self.phi,
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "flow_grid": self.flow_grid,
            "train_subset_k": self.train_subset_k,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "warmup_iterations": self.warmup_iterations,
            "lr_schedule": self.lr_schedule,
            "perturb_trainable_only": self.perturb_trainable_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainState:
    iteration: int = 0
    loss_count: int = 0
    loss_sum: float = 0.0
    last_loss: float | None = None

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / max(1, self.loss_count)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "loss_count": self.loss_count,
            "loss_sum": self.loss_sum,
            "last_loss": self.last_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(**d)


class Lookahead:
    """Lookahead wrapper: sync slow weights toward fast weights every k steps.

    Combined with a rectified adaptive inner optimizer this is the cited
    Ranger-style scheme.
    """

    def __init__(self, base: torch.optim.Optimizer, k: int = 6, alpha: float = 0.5):
        self.base = base
        self.k = k
        self.alpha = alpha
        self.counter = 0
        self.slow = [
            p.detach().clone() for group in base.param_groups for p in group["params"]
        ]

    def _fast_params(self):
        return [p for group in self.base.param_groups for p in group["params"]]

    def zero_grad(self, set_to_none: bool = True) -> None:
        self.base.zero_grad(set_to_none=set_to_none)

    def step(self) -> None:
        self.base.step()
        self.counter += 1
        if self.counter % self.k:
            return
        with torch.no_grad():
            for slow, fast in zip(self.slow, self._fast_params()):
                slow.add_(fast.detach() - slow, alpha=self.alpha)
                fast.copy_(slow)

    def state_dict(self) -> dict:
        return {
            "base": self.base.state_dict(),
            "counter": self.counter,
            "slow": [t.clone() for t in self.slow],
            "k": self.k,
            "alpha": self.alpha,
        }

    def load_state_dict(self, state: dict) -> None:
        self.base.load_state_dict(state["base"])
        self.counter = state["counter"]
        self.k = state["k"]
        self.alpha = state["alpha"]
        self.slow = [t.clone() for t in state["slow"]]


def make_optimizer(params, cfg: TrainConfig):
    params = list(params)
    if cfg.optimizer == "ranger":
        return Lookahead(torch.optim.RAdam(params, lr=cfg.learning_rate))
    if cfg.optimizer == "radam":
        return torch.optim.RAdam(params, lr=cfg.learning_rate)
    return torch.optim.Adam(params, lr=cfg.learning_rate)


def learning_rate_at(cfg: TrainConfig, iteration: int) -> float:
    """Scheduled rate: linear warmup, then constant or cosine decay."""
    if cfg.warmup_iterations > 0 and iteration < cfg.warmup_iterations:
        return cfg.learning_rate * (iteration + 1) / cfg.warmup_iterations
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    span = max(1, cfg.iterations - cfg.warmup_iterations)
    progress = min(1.0, (iteration - cfg.warmup_iterations) / span)
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * progress))


def set_learning_rate(optimizer, lr: float) -> None:
    base = optimizer.base if isinstance(optimizer, Lookahead) else optimizer
    for group in base.param_groups:
        group["lr"] = lr


def derived_seed(*parts: int) -> int:
    """Deterministic 31-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0] >> 1)


def sample_training_pair(generator, cfg: TrainConfig, seed: int, w_bar=None, layer_mask=None):
    """One (w_before, w_after) pair: truncate(psi) broadcast, then perturb(phi)."""
    if w_bar is None:
        w_bar = generator.average_latent(256, seed=cfg.seed)
    return sample_pair(generator, w_bar, cfg.psi, cfg.phi, seed=seed, layer_mask=layer_mask)


def _pseudo_inputs(generator, backend, norms, cfg, w_before, w_after, seed):
    """Flow-derived user inputs for a pair, or None if nothing is valid."""
    img_a = generator.synthesize(w_before)
    img_b = generator.synthesize(w_after)
    field = normalize(backend.estimate(img_a, img_b), norms)
    inputs = subsample(field, cfg.flow_grid)
    if len(inputs) == 0:
        return None
    if cfg.train_subset_k is not None:
        k = min(cfg.train_subset_k, len(inputs))
        inputs = random_subset(inputs, k, seed=seed)
    return inputs


def pair_loss(model, generator, backend, norms, cfg, seed, w_bar, frozen=None):
    """Prediction loss for one pair; ``frozen`` short-circuits data sampling.

    Returns None when the pair yields no valid flow samples anywhere, in
    which case the caller draws a fresh pair.
    """
    layer_mask = (
        list(model.config.trainable_layer_indices) if cfg.perturb_trainable_only else None
    )
    if frozen is None:
        w_before, w_after = sample_training_pair(
            generator, cfg, seed, w_bar=w_bar, layer_mask=layer_mask
        )
        inputs = _pseudo_inputs(
            generator, backend, norms, cfg, w_before, w_after, seed=derived_seed(seed, 1)
        )
        if inputs is None:
            return None
    else:
        w_before, w_after, inputs = frozen
    features = generator.extract_feature_map(w_before)
    directions = model.estimate_directions(w_before, inputs, features)
    idx = list(model.config.trainable_layer_indices)
    # Alpha is fixed to 1 during training.
    prediction = w_before[idx] + directions
    return F.mse_loss(prediction, w_after[idx]), (w_before, w_after)


def training_step(
    model,
    generator,
    backend,
    norms: Normalizers,
    cfg: TrainConfig,
    state: TrainState,
    optimizer,
    w_bar=None,
    frozen=None,
    max_resamples: int = 16,
) -> float:
    """One optimizer update; returns the scalar loss for this iteration."""
    if w_bar is None:
        w_bar = generator.average_latent(256, seed=cfg.seed)
    losses = []
    pairs = []
    for b in range(cfg.batch_size):
        result = None
        for attempt in range(max_resamples):
            seed = derived_seed(cfg.seed, state.iteration, b, attempt)
            result = pair_loss(
                model, generator, backend, norms, cfg, seed, w_bar, frozen=frozen
            )
            if result is not None:
                break
        if result is None:
            raise CalibrationError(
                f"iteration {state.iteration}: no valid flow samples after "
                f"{max_resamples} resampled pairs"
            )
        losses.append(result[0])
        pairs.append(result[1])
    loss = torch.stack(losses).mean()
    if not torch.isfinite(loss):
        dump = Path(f"latentdrag_diverged_iter{state.iteration}.pt")
        torch.save(
            {"pairs": pairs, "iteration": state.iteration, "loss": loss.item()}, dump
        )
        raise TrainingError(
            f"non-finite loss at iteration {state.iteration}; offending pair dumped "
            f"to {dump}"
        )
    set_learning_rate(optimizer, learning_rate_at(cfg, state.iteration))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    value = float(loss.item())
    state.iteration += 1
    state.loss_count += 1
    state.loss_sum += value
    state.last_loss = value
    return value


def save_train_checkpoint(path, model, optimizer, cfg: TrainConfig, state: TrainState):
    torch.save(
        {
            "model": model.state_dict(),
            "model_config": model.config.to_dict(),
            "optimizer": optimizer.state_dict(),
            "config": cfg.to_dict(),
            "state": state.to_dict(),
        },
        path,
    )


def resume(path) -> TrainState:
    """Training state recorded in a checkpoint, for inspection and restarts."""
    payload = _load_train_checkpoint(path)
    return TrainState.from_dict(payload["state"])


def _load_train_checkpoint(path) -> dict:
    from .errors import CheckpointError

    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot load training checkpoint: {exc}") from exc
    missing = {"model", "optimizer", "config", "state"} - set(payload)
    if missing:
        raise CheckpointError(f"{path}: training checkpoint missing {sorted(missing)}")
    return payload


def train(
    model,
    generator,
    backend,
    norms: Normalizers,
    cfg: TrainConfig,
    out_dir,
    resume_from=None,
) -> Path:
    """Run (or continue) training; returns the final weights archive path.

    Side effects in ``out_dir``: ``loss_log.jsonl`` (one record per
    iteration), ``train_state_*.pt`` every ``checkpoint_every`` iterations
    plus final, and ``transformer_final.ld``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = TrainState()
    optimizer = make_optimizer(model.parameters(), cfg)
    if resume_from is not None:
        payload = _load_train_checkpoint(resume_from)
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        state = TrainState.from_dict(payload["state"])
    log_path = out_dir / "loss_log.jsonl"
    mode = "a" if resume_from is not None else "w"
    w_bar = generator.average_latent(256, seed=cfg.seed)
    with open(log_path, mode) as log:
        while state.iteration < cfg.iterations:
            loss = training_step(
                model, generator, backend, norms, cfg, state, optimizer, w_bar=w_bar
            )
            log.write(
                json.dumps(
                    {"iteration": state.iteration, "loss": loss, "wall_time": time.time()}
                )
                + "\n"
            )
            if state.iteration % cfg.checkpoint_every == 0:
                save_train_checkpoint(
                    out_dir / f"train_state_{state.iteration:06d}.pt",
                    model,
                    optimizer,
                    cfg,
                    state,
                )
    save_train_checkpoint(out_dir / "train_state_final.pt", model, optimizer, cfg, state)
    final = out_dir / "transformer_final.ld"
    model.save_weights(final)
    return final

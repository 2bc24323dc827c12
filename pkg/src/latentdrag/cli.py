"""Command-line entry points: train, serve, eval."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .errors import ConfigError
from .flow import BlockMatchingBackend, calibrate
from .generator import Generator
from .training import TrainConfig
from .transformer import LatentTransformer, TransformerConfig


@click.group()
def main():
    """Latent-space drag editing of style-based generator images."""


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _build_backend(spec: dict | None) -> BlockMatchingBackend:
    spec = dict(spec or {})
    if "scales" in spec:
        spec["scales"] = tuple(spec["scales"])
    return BlockMatchingBackend(**spec)


def _default_transformer_config(generator: Generator, overrides: dict | None) -> TransformerConfig:
    cfg = {
        "latent_dim": generator.config.latent_dim,
        "feature_channels": generator.config.channels[
            generator.config.resolutions.index(generator.config.tap_resolution_actual)
        ],
    }
    cfg.update(overrides or {})
    if "trainable_layer_indices" in cfg:
        cfg["trainable_layer_indices"] = tuple(cfg["trainable_layer_indices"])
    return TransformerConfig(**cfg)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--subset-k", type=int, default=None, help="Override train_subset_k.")
@click.option("--no-style-features", is_flag=True, help="Ablate generator features.")
@click.option("--no-pos-embeddings", is_flag=True, help="Ablate layer position embeddings.")
def train(config_path, resume_path, subset_k, no_style_features, no_pos_embeddings):
    """Train the latent transformer from a JSON config file.

    The file holds a "train" object (TrainConfig fields), a
    "generator_checkpoint" path, an optional "transformer" object
    (TransformerConfig overrides), an optional "flow_backend" object,
    "calibration_pairs", and "out_dir".
    """
    from .training import train as run_training

    spec = _load_json(config_path)
    if "generator_checkpoint" not in spec or "out_dir" not in spec:
        raise ConfigError("config must name generator_checkpoint and out_dir")
    cfg = TrainConfig.from_dict(spec.get("train", {}))
    if subset_k is not None:
        cfg.train_subset_k = subset_k
    generator = Generator.load_weights(spec["generator_checkpoint"]).eval()
    tcfg = _default_transformer_config(generator, spec.get("transformer"))
    if no_style_features:
        tcfg.use_style_features = False
    if no_pos_embeddings:
        tcfg.use_position_embeddings = False
    model = LatentTransformer(tcfg, init_seed=cfg.seed)
    backend = _build_backend(spec.get("flow_backend"))
    layer_mask = (
        list(tcfg.trainable_layer_indices) if cfg.perturb_trainable_only else None
    )
    norms = calibrate(
        generator,
        backend,
        n_pairs=int(spec.get("calibration_pairs", 20)),
        seed=cfg.seed,
        psi=cfg.psi,
        phi=cfg.phi,
        layer_mask=layer_mask,
    )
    final = run_training(
        model, generator, backend, norms, cfg, spec["out_dir"], resume_from=resume_path
    )
    click.echo(f"final checkpoint: {final}")


@main.command()
@click.option("--generator", "generator_path", required=True, type=click.Path(exists=True))
@click.option("--transformer", "transformer_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--beta", default=0.02, type=float)
def serve(generator_path, transformer_path, host, port, beta):
    """Run the websocket editing server."""
    from .service import ServerConfig, serve as run_server

    run_server(
        ServerConfig(
            generator_checkpoint=generator_path,
            transformer_checkpoint=transformer_path,
            host=host,
            port=port,
            beta=beta,
        )
    )


@main.command("eval")
@click.option("--generator", "generator_path", required=True, type=click.Path(exists=True))
@click.option("--transformer", "transformer_path", required=True, type=click.Path(exists=True))
@click.option("--n", default=20, type=int)
@click.option("--K", "k_list", default="1,32", help="Comma-separated input counts.")
@click.option(
    "--methods",
    default="ours,identity",
    help="Comma-separated subset of: ours, identity, sefa_greedy, sefa_random.",
)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=1, type=int)
@click.option("--psi", default=0.3, type=float)
@click.option("--phi", default=0.1, type=float)
def eval_cmd(generator_path, transformer_path, n, k_list, methods, out_dir, seed, psi, phi):
    """Run the triplet benchmark and emit report files."""
    from . import evaluation as ev

    generator = Generator.load_weights(generator_path).eval()
    transformer = LatentTransformer.load_weights(transformer_path).eval()
    backend = _build_backend(None)
    layer_mask = list(transformer.config.trainable_layer_indices)
    norms = calibrate(
        generator, backend, n_pairs=20, seed=seed, psi=psi, phi=phi, layer_mask=layer_mask
    )
    ks = [int(k) for k in k_list.split(",") if k]
    wanted = [m.strip() for m in methods.split(",") if m.strip()]
    reports = []
    max_k = max(ks)
    triplets = ev.generate_benchmark(
        generator, backend, norms, n=n, k=max_k, seed=seed, psi=psi, phi=phi,
        layer_mask=layer_mask,
    )
    sefa_dirs = None
    for name in wanted:
        for k in ks:
            if name == "ours":
                method = ev.subset_method(
                    ev.ours_method(transformer, generator), k, seed=seed
                )
            elif name == "identity":
                method = ev.identity_method
            elif name in ("sefa_greedy", "sefa_random"):
                if sefa_dirs is None:
                    sefa_k = min(50, generator.config.latent_dim)
                    sefa_dirs = ev.sefa_directions(generator, sefa_k)
                mode = name.split("_")[1]
                method = ev.sefa_method(generator, sefa_dirs, mode=mode, seed=seed)
            else:
                raise ConfigError(f"unknown method {name!r}")
            reports.append(
                ev.evaluate_method(method, triplets, generator, name=name, k=k)
            )
    paths = ev.emit_report(reports, out_dir)
    click.echo(Path(paths["txt"]).read_text())
    click.echo(f"report written to {out_dir}")


if __name__ == "__main__":
    main()

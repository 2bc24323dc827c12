import pytest
import torch

from latentdrag.generator import Generator, GeneratorConfig
from latentdrag.transformer import LatentTransformer, TransformerConfig


@pytest.fixture(scope="session")
def toy_generator():
    """Random-init toy generator, enough for shape/determinism tests."""
    return Generator(GeneratorConfig.toy(), init_seed=0).eval()


@pytest.fixture(scope="session")
def toy_transformer_config(toy_generator):
    cfg = toy_generator.config
    feature_channels = cfg.channels[cfg.resolutions.index(cfg.tap_resolution_actual)]
    return TransformerConfig(
        model_dim=64,
        token_dim=32,
        heads=4,
        layers=2,
        feed_forward_dim=128,
        latent_dim=cfg.latent_dim,
        feature_channels=feature_channels,
    )


@pytest.fixture(scope="session")
def toy_transformer(toy_transformer_config):
    return LatentTransformer(toy_transformer_config, init_seed=0).eval()


@pytest.fixture(scope="session")
def blob_generator(tmp_path_factory):
    """Pretrained layout generator whose renders move coherently with latents."""
    from latentdrag.toy import get_toy_generator

    cache = tmp_path_factory.mktemp("fixtures") / "layout_generator.ld"
    return get_toy_generator(cache_path=cache)


@pytest.fixture()
def toy_latents(toy_generator):
    z = toy_generator.sample_z(seed=3)
    return toy_generator.broadcast(toy_generator.map_z_to_w(z)[0])


@pytest.fixture()
def toy_features(toy_generator, toy_latents):
    return toy_generator.extract_feature_map(toy_latents)


def random_inputs(k, resolution, seed=0):
    gen = torch.Generator().manual_seed(seed)
    from latentdrag.transformer import UserInputSet

    vectors = torch.randn(k, 3, generator=gen)
    positions = torch.randint(0, resolution, (k, 2), generator=gen)
    return UserInputSet(vectors, positions)

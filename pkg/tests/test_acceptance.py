"""End-to-end acceptance suite (P1 through P12).

Heavy artifacts (the pretrained layout generator and the 3000-iteration
training run) are module-scoped fixtures shared by the convergence,
benchmark, ablation, and service tests.
"""

import json
import time

import numpy as np
import pytest
import torch
from scipy import ndimage

from latentdrag import evaluation as ev
from latentdrag.flow import BlockMatchingBackend, FlowField, calibrate
from latentdrag.generator import FeatureGrid
from latentdrag.interaction import (
    DragGesture,
    InteractionConfig,
    anchor_to_input,
    drag_to_input,
    wheel_to_input,
)
from latentdrag.service import EditingService, create_app
from latentdrag.training import TrainConfig, pair_loss, train
from latentdrag.transformer import LatentTransformer, TransformerConfig, UserInputSet

L = 8
DIM = 64


def make_model(seed, head_std=0.05, **overrides):
    cfg = TransformerConfig(
        model_dim=64,
        token_dim=32,
        heads=4,
        layers=2,
        feed_forward_dim=128,
        latent_dim=DIM,
        feature_channels=16,
        **overrides,
    )
    model = LatentTransformer(cfg, init_seed=seed)
    if head_std:
        with torch.no_grad():
            model.head.weight.normal_(std=head_std)
    return model.eval()


def random_case(seed, k, resolution=32, channels=16, grid=8):
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(L, DIM, generator=gen)
    inputs = UserInputSet(
        torch.randn(k, 3, generator=gen),
        torch.randint(0, resolution, (k, 2), generator=gen),
    )
    features = FeatureGrid(
        activations=torch.randn(grid, grid, channels, generator=gen),
        image_resolution=resolution,
        requested_resolution=grid,
    )
    return w, inputs, features


# -- P1: Eq. (1) identity and linearity --------------------------------------


def test_p1_identity_and_linearity():
    start = time.monotonic()
    for seed in range(3):
        model = make_model(seed)
        for k in (1, 4, 32):
            w, inputs, features = random_case(100 * seed + k, k)
            with torch.no_grad():
                zero = model.transform(w, inputs, 0.0, features)
                unit = model.transform(w, inputs, 1.0, features)
                assert torch.equal(zero, w)
                base = unit - w
                assert float(base.abs().max()) > 0
                for alpha in (0.25, 0.5, 2.0, -1.0):
                    moved = model.transform(w, inputs, alpha, features)
                    diff = (moved - w) - alpha * base
                    bound = 1e-6 * float((alpha * base).abs().max())
                    assert float(diff.abs().max()) <= bound + 1e-12
    assert time.monotonic() - start < 10


# -- P2: permutation invariance -----------------------------------------------


def test_p2_permutation_invariance():
    start = time.monotonic()
    model = make_model(0)
    rng = np.random.default_rng(0)
    for case in range(100):
        k = int(rng.integers(2, 12))
        w, inputs, features = random_case(1000 + case, k)
        perm = torch.from_numpy(rng.permutation(k))
        permuted = UserInputSet(inputs.vectors[perm], inputs.positions[perm])
        with torch.no_grad():
            d_orig = model.estimate_directions(w, inputs, features)
            d_perm = model.estimate_directions(w, permuted, features)
        scale = float(d_orig.norm())
        assert float((d_orig - d_perm).norm()) <= 1e-5 * max(scale, 1e-6)
    assert time.monotonic() - start < 30


# -- P3: pass-through of non-trainable layers ---------------------------------


def test_p3_pass_through():
    start = time.monotonic()
    model = make_model(1)
    frozen = [i for i in range(L) if i not in model.config.trainable_layer_indices]
    assert frozen, "toy config must leave some layers non-trainable"
    rng = np.random.default_rng(1)
    for case in range(100):
        k = int(rng.integers(1, 8))
        w, inputs, features = random_case(2000 + case, k)
        with torch.no_grad():
            out = model.transform(w, inputs, float(rng.uniform(-2, 2)), features)
        assert torch.equal(out[frozen], w[frozen])
    assert time.monotonic() - start < 10


# -- P4: gradient check --------------------------------------------------------


def test_p4_gradient_check():
    start = time.monotonic()
    cfg = TransformerConfig(
        model_dim=16,
        token_dim=16,
        heads=2,
        layers=2,
        feed_forward_dim=32,
        latent_dim=16,
        feature_channels=8,
    )
    model = LatentTransformer(cfg, init_seed=0)
    with torch.no_grad():
        for p in model.parameters():
            if p.numel() > 1 and float(p.std()) == 0:
                p.normal_(std=0.1)
    model.eval()

    gen = torch.Generator().manual_seed(1)
    w = torch.randn(L, 16, generator=gen)
    inputs = UserInputSet(
        torch.randn(5, 3, generator=gen), torch.randint(0, 32, (5, 2), generator=gen)
    )
    features = FeatureGrid(
        activations=torch.randn(8, 8, 8, generator=gen),
        image_resolution=32,
        requested_resolution=8,
    )

    def loss_value():
        f = model.estimate_directions(w, inputs, features)
        return (f ** 2).sum()

    model.zero_grad()
    loss_value().backward()

    coords = [(p, i) for p in model.parameters() for i in range(p.numel())]
    rng = np.random.default_rng(0)
    sampled = rng.choice(len(coords), size=600, replace=False)
    assert len(sampled) >= 500

    eps = 0.03
    analytic = []
    numeric = []
    for j in sampled:
        p, i = coords[j]
        flat = p.data.view(-1)
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
            plus = float(loss_value())
            flat[i] = orig - eps
            minus = float(loss_value())
            flat[i] = orig
        numeric.append((plus - minus) / (2 * eps))
        analytic.append(float(p.grad.view(-1)[i]))
    analytic = np.array(analytic, dtype=np.float32)
    numeric = np.array(numeric, dtype=np.float32)
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
    assert rel < 1e-3
    assert time.monotonic() - start < 120


# -- P5: interaction math --------------------------------------------------------


def test_p5_interaction_table():
    start = time.monotonic()
    # Hand-evaluated drags: (start, end, z_key, beta) -> (vector, alpha).
    drag_cases = [
        (((0, 0), (30, 40), "none", 0.02), ((0.6, 0.8, 0.0), 50 * 0.02)),
        (((0, 0), (30, 40), "zoom_in", 0.02), ((0.6, 0.8, -5.0), 50 * 0.02)),
        (((0, 0), (30, 40), "zoom_out", 0.02), ((0.6, 0.8, 5.0), 50 * 0.02)),
        (((10, 10), (20, 10), "none", 0.02), ((1.0, 0.0, 0.0), 10 * 0.02)),
        (((10, 10), (0, 10), "none", 0.02), ((-1.0, 0.0, 0.0), 10 * 0.02)),
        (((5, 5), (5, 25), "none", 0.02), ((0.0, 1.0, 0.0), 20 * 0.02)),
        (((5, 25), (5, 5), "none", 0.02), ((0.0, -1.0, 0.0), 20 * 0.02)),
        (((0, 0), (3, 4), "none", 1.0), ((0.6, 0.8, 0.0), 5 * 1.0)),
        (((0, 0), (4, 3), "none", 0.02), ((0.8, 0.6, 0.0), 5 * 0.02)),
        (((0, 0), (5, 12), "none", 0.02), ((5 / 13, 12 / 13, 0.0), 13 * 0.02)),
        (((0, 0), (8, 15), "zoom_in", 0.02), ((8 / 17, 15 / 17, -5.0), 17 * 0.02)),
        (((0, 0), (20, 21), "none", 0.1), ((20 / 29, 21 / 29, 0.0), 29 * 0.1)),
        (((16, 16), (10, 8), "none", 0.02), ((-0.6, -0.8, 0.0), 10 * 0.02)),
        (((0, 0), (7, 24), "zoom_out", 0.02), ((0.28, 0.96, 5.0), 25 * 0.02)),
        (((2, 3), (11, 15), "none", 0.02), ((0.6, 0.8, 0.0), 15 * 0.02)),
        (((31, 31), (19, 26), "none", 0.5), ((-12 / 13, -5 / 13, 0.0), 13 * 0.5)),
    ]
    for (s, e, key, beta), (vec, alpha) in drag_cases:
        cfg = InteractionConfig(beta=beta)
        vector, position, got_alpha = drag_to_input(DragGesture(s, e, key), cfg)
        assert torch.equal(vector, torch.tensor(vec, dtype=torch.float32))
        assert got_alpha == alpha
        assert position == s

    # Wheel cases: (position, clicks, step) -> (vector, alpha).
    wheel_cases = [
        (((4, 4), 1, 0.1), ((0.0, 0.0, -5.0), 1 * 0.1)),
        (((4, 4), -3, 0.1), ((0.0, 0.0, 5.0), 3 * 0.1)),
        (((16, 16), 2, 0.25), ((0.0, 0.0, -5.0), 2 * 0.25)),
    ]
    for (p, clicks, step), (vec, alpha) in wheel_cases:
        cfg = InteractionConfig(wheel_alpha_step=step)
        vector, position, got_alpha = wheel_to_input(p, clicks, cfg, 32)
        assert torch.equal(vector, torch.tensor(vec, dtype=torch.float32))
        assert got_alpha == alpha
        assert position == p

    # Anchor case: zero vector at the pixel.
    vector, position = anchor_to_input((7, 9), 32)
    assert torch.equal(vector, torch.zeros(3))
    assert position == (7, 9)
    assert time.monotonic() - start < 1


# -- P6: flow oracle on integer translations ------------------------------------


def smooth_texture(seed, size=64):
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(size, size, 3))
    tex = ndimage.gaussian_filter(noise, sigma=(2, 2, 0))
    return (tex / np.abs(tex).max()).astype(np.float32)


def test_p6_flow_oracle():
    start = time.monotonic()
    backend = BlockMatchingBackend(search_radius=5, scales=(1.0,))
    rng = np.random.default_rng(6)
    margin = 16
    for trial in range(10):
        tx, ty = (int(v) for v in rng.integers(-5, 6, size=2))
        tex = smooth_texture(trial)
        shifted = np.roll(tex, shift=(ty, tx), axis=(0, 1))
        field = backend.estimate(tex, shifted)
        center = field.values[margin:-margin, margin:-margin]
        valid = field.valid[margin:-margin, margin:-margin]
        assert valid.all()
        assert np.array_equal(
            center, np.broadcast_to([tx, ty, 0.0], center.shape).astype(np.float32)
        )

    identity = backend.estimate(smooth_texture(99), smooth_texture(99))
    center = identity.values[margin:-margin, margin:-margin]
    assert np.array_equal(center, np.zeros_like(center))
    assert time.monotonic() - start < 60


# -- P7: calibration -------------------------------------------------------------


class ConstantBackend:
    """Oracle emitting a constant flow; per-map maxima are known exactly."""

    def __init__(self, xy_max=4.0, z_max=0.5):
        self.name = "constant"
        self.xy_max = xy_max
        self.z_max = z_max

    def estimate(self, img_a, img_b):
        h, w = np.asarray(img_a).shape[:2]
        values = np.zeros((h, w, 3), dtype=np.float32)
        values[..., 0] = self.xy_max
        values[..., 2] = self.z_max
        return FlowField(values=values, valid=np.ones((h, w), bool), backend=self.name)


def test_p7_calibration(toy_generator):
    start = time.monotonic()
    for n_pairs in (1, 10):
        norms = calibrate(
            toy_generator, ConstantBackend(xy_max=4.0), n_pairs=n_pairs, seed=0
        )
        assert norms.sigma_f == 4.0
    scaled = calibrate(
        toy_generator, ConstantBackend(xy_max=12.0, z_max=1.5), n_pairs=10, seed=0
    )
    assert scaled.sigma_f == 3 * 4.0
    assert time.monotonic() - start < 60


# -- P8/P9/P11/P12 shared training run --------------------------------------------


P8_TRAIN = dict(
    psi=1.0,
    phi=0.3,
    iterations=3000,
    batch_size=1,
    learning_rate=5e-4,
    optimizer="ranger",
    flow_grid=16,
    train_subset_k=32,
    seed=0,
    warmup_iterations=500,
    lr_schedule="cosine",
    checkpoint_every=1000,
)


@pytest.fixture(scope="module")
def training_run(blob_generator, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("acceptance_train")
    backend = BlockMatchingBackend(search_radius=4)
    norms = calibrate(blob_generator, backend, n_pairs=20, seed=0, psi=1.0, phi=0.3)
    model = make_model(0, head_std=0.0)
    cfg = TrainConfig(**P8_TRAIN)
    started = time.monotonic()
    final = train(model, blob_generator, backend, norms, cfg, out_dir)
    elapsed = time.monotonic() - started
    losses = [
        json.loads(line)["loss"]
        for line in (out_dir / "loss_log.jsonl").read_text().splitlines()
    ]
    return {
        "model": model.eval(),
        "backend": backend,
        "norms": norms,
        "config": cfg,
        "checkpoint": final,
        "losses": losses,
        "elapsed": elapsed,
        "out_dir": out_dir,
    }


def test_p8_convergence(training_run):
    losses = training_run["losses"]
    assert len(losses) == 3000
    first = float(np.mean(losses[:100]))
    last = float(np.mean(losses[-100:]))
    assert last < 0.5 * first, f"ratio {last / first:.4f}"
    assert training_run["elapsed"] < 20 * 60


def test_p8_single_pair_overfit(blob_generator, training_run):
    start = time.monotonic()
    cfg = TrainConfig(**{**P8_TRAIN, "learning_rate": 1e-3, "lr_schedule": "constant",
                         "warmup_iterations": 0})
    model = make_model(3, head_std=0.0)
    model.train(True)
    w_bar = blob_generator.average_latent(256, seed=cfg.seed)
    from latentdrag.training import make_optimizer, sample_training_pair, _pseudo_inputs

    wb, wa = sample_training_pair(blob_generator, cfg, seed=12345, w_bar=w_bar,
                                  layer_mask=list(model.config.trainable_layer_indices))
    inputs = _pseudo_inputs(
        blob_generator, training_run["backend"], training_run["norms"], cfg, wb, wa,
        seed=0,
    )
    assert inputs is not None
    frozen = (wb, wa, inputs)
    optimizer = make_optimizer(model.parameters(), cfg)
    reached = None
    for step in range(2000):
        optimizer.zero_grad()
        loss, _ = pair_loss(
            model, blob_generator, training_run["backend"], training_run["norms"],
            cfg, seed=0, w_bar=w_bar, frozen=frozen,
        )
        loss.backward()
        optimizer.step()
        if float(loss.detach()) < 1e-3:
            reached = step
            break
    assert reached is not None, "single-pair loss never fell below 1e-3"
    assert time.monotonic() - start < 10 * 60


# -- P9: end-to-end K-trend ---------------------------------------------------------


def test_p9_k_trend(blob_generator, training_run):
    start = time.monotonic()
    model = training_run["model"]
    triplets = ev.generate_benchmark(
        blob_generator,
        training_run["backend"],
        training_run["norms"],
        n=20,
        k=32,
        seed=0,
        psi=1.0,
        phi=0.3,
        layer_mask=list(model.config.trainable_layer_indices),
    )
    ours = ev.ours_method(model, blob_generator)
    ours_32 = ev.evaluate_method(ours, triplets, blob_generator, name="ours-32")
    ours_1 = ev.evaluate_method(
        ev.subset_method(ours, 1, seed=0), triplets, blob_generator, name="ours-1"
    )
    identity = ev.evaluate_method(
        ev.identity_method, triplets, blob_generator, name="identity"
    )
    assert ours_32.mse <= ours_1.mse
    assert ours_1.mse < identity.mse
    assert ours_32.mse < identity.mse
    assert time.monotonic() - start < 10 * 60


# -- P10: greedy baseline oracle equality ---------------------------------------------


def test_p10_greedy_equals_brute_force(toy_generator):
    start = time.monotonic()
    directions = ev.sefa_directions(toy_generator, k=4)
    gram = directions @ directions.T
    assert float((gram - torch.eye(4)).abs().max()) < 1e-5

    cfg = ev.SeFaConfig(k=4, grid_points=11)
    rng = np.random.default_rng(10)
    for trial in range(10):
        z = toy_generator.sample_z(seed=3000 + trial)
        w = toy_generator.broadcast(toy_generator.map_z_to_w(z)[0])
        shift = float(rng.uniform(-2, 2)) * directions[int(rng.integers(0, 4))]
        target = toy_generator.synthesize(w + shift[None, :])
        result = ev.greedy_search(toy_generator, directions, w, target, cfg)

        # Independent exhaustive scan, enumerated value-major instead of
        # direction-major, with the same (metric, index, value) tie-break.
        best = None
        for value in cfg.grid_values:
            for i in range(4):
                candidate = w + float(value) * directions[i][None, :]
                metric = ev.perceptual(toy_generator.synthesize(candidate), target)
                key = (metric, i, float(value))
                if best is None or key < best[0]:
                    best = (key, candidate)
        (metric, index, value), candidate = best
        assert result[0] == index
        assert result[1] == value
        assert result[4] == metric
        assert torch.equal(result[2], candidate)
    assert time.monotonic() - start < 5 * 60


# -- P11: ablation behavior ------------------------------------------------------------


def test_p11_style_feature_ablation(blob_generator, training_run):
    start = time.monotonic()
    w = blob_generator.broadcast(blob_generator.average_latent(64, seed=0))
    features = blob_generator.extract_feature_map(w)
    vec = torch.tensor([[1.0, 0.0, 0.0]])
    a = UserInputSet(vec.clone(), torch.tensor([[4, 4]]))
    b = UserInputSet(vec.clone(), torch.tensor([[27, 25]]))

    ablated = make_model(2, use_style_features=False)
    with torch.no_grad():
        d_a = ablated.estimate_directions(w, a, features)
        d_b = ablated.estimate_directions(w, b, features)
    assert torch.equal(d_a, d_b)

    trained = training_run["model"]
    assert trained.config.use_style_features
    with torch.no_grad():
        t_a = trained.estimate_directions(w, a, features)
        t_b = trained.estimate_directions(w, b, features)
    assert not torch.equal(t_a, t_b)
    assert float((t_a - t_b).abs().max()) > 1e-6
    assert time.monotonic() - start < 60


# -- P12: service determinism -----------------------------------------------------------


GESTURE_LOG = [
    {"type": "create_session", "seed": 4},
    {"type": "anchor_add", "p": [5, 5]},
    {"type": "anchor_add", "p": [20, 12]},
    {"type": "drag", "gesture_id": 1, "s": [8, 8], "e": [18, 14], "z_key": "none"},
    {"type": "drag", "gesture_id": 2, "s": [8, 8], "e": [20, 20], "z_key": "zoom_in"},
    {"type": "revert"},
    {"type": "drag", "gesture_id": 3, "s": [16, 16], "e": [10, 24], "z_key": "none"},
    {"type": "commit"},
    {"type": "wheel", "gesture_id": 4, "p": [16, 16], "clicks": 2},
    {"type": "revert"},
    {"type": "anchor_remove", "p": [5, 5]},
    {"type": "drag", "gesture_id": 5, "s": [4, 28], "e": [12, 22], "z_key": "none"},
    {"type": "commit"},
    {"type": "set_beta", "beta": 0.05},
    {"type": "drag", "gesture_id": 6, "s": [24, 6], "e": [14, 6], "z_key": "zoom_out"},
    {"type": "revert"},
    {"type": "anchor_add", "p": [3, 30]},
    {"type": "wheel", "gesture_id": 7, "p": [8, 8], "clicks": -1},
    {"type": "commit"},
    {"type": "drag", "gesture_id": 8, "s": [16, 4], "e": [16, 20], "z_key": "none"},
]


def replay_log(generator_path, transformer_path):
    from latentdrag.generator import Generator
    from starlette.testclient import TestClient

    generator = Generator.load_weights(generator_path).eval()
    transformer = LatentTransformer.load_weights(transformer_path).eval()
    service = EditingService(generator, transformer)
    app = create_app(service)
    responses = []
    with TestClient(app).websocket_connect("/ws") as socket:
        session_id = None
        for message in GESTURE_LOG:
            outgoing = dict(message)
            if message["type"] != "create_session":
                outgoing["session_id"] = session_id
            socket.send_json(outgoing)
            reply = socket.receive_json()
            if message["type"] == "create_session":
                session_id = reply["session_id"]
            responses.append(reply)
    return responses


def test_p12_service_determinism(blob_generator, training_run, tmp_path):
    start = time.monotonic()
    generator_path = tmp_path / "generator.ld"
    blob_generator.save_weights(generator_path)
    transformer_path = training_run["checkpoint"]

    first = replay_log(generator_path, transformer_path)
    second = replay_log(generator_path, transformer_path)
    assert len(first) == len(GESTURE_LOG)
    assert all(r["type"] == "frame" for r in first)
    for a, b in zip(first, second):
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    # Revert restores the pre-gesture frame; commit pins the edited frame.
    assert first[5]["image"] == first[2]["image"]
    assert first[9]["image"] == first[7]["image"]
    assert first[15]["image"] == first[12]["image"]
    assert first[7]["image"] == first[6]["image"]
    assert time.monotonic() - start < 2 * 60

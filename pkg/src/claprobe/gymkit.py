"""Small vanilla-GAN harness, toy datasets and planted-artifact fixtures.

Training optimizes the minimax objective with a sigmoid on the
discriminator logit ``y``::

    V(D, G) = E_x[log f(D(x))] + E_z[log(1 - f(D(G(z))))]

The generator minimizes the second term directly (no non-saturating
substitute), so a plain SGD step on the generator reproduces the update
analysed in :mod:`claprobe.linan`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .netcore import (
    IDENTITY,
    Activation,
    NetworkSpec,
    NeuronSite,
    backward,
    dense_layer,
    forward_batch,
    leaky_relu,
    load_model,
    mlp,
    relu,
    save_model,
)
from .probe import ClaRecord, ProbeConfig, cla


class DivergenceError(FloatingPointError):
    """A loss became NaN or infinite during training."""


# -- datasets ----------------------------------------------------------------

DATASET_KINDS = ("gaussian_ring", "gaussian_grid", "synthetic_shapes_8x8")


@dataclass(frozen=True)
class ToyDatasetSpec:
    kind: str = "gaussian_ring"
    modes: int = 8
    sigma: float = 0.05
    samples: int = 2000
    seed: int = 0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.modes < 1:
            raise ValueError("need at least one mode")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def mode_centers(spec: ToyDatasetSpec) -> np.ndarray:
    if spec.kind == "gaussian_ring":
        angles = 2 * np.pi * np.arange(spec.modes) / spec.modes
        return spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if spec.kind == "gaussian_grid":
        side = int(np.ceil(np.sqrt(spec.modes)))
        pts = [(i, j) for i in range(side) for j in range(side)][: spec.modes]
        return np.array(pts, dtype=np.float64) - (side - 1) / 2.0
    return shape_templates(spec.modes).reshape(spec.modes, -1)


def shape_templates(count: int) -> np.ndarray:
    """``count`` distinct 3x8x8 images in [-1, 1]: bars, boxes, crosses, diagonals."""
    masks = []
    eye = np.eye(8)
    base = [
        np.pad(np.ones((2, 8)), ((3, 3), (0, 0))),
        np.pad(np.ones((8, 2)), ((0, 0), (3, 3))),
        np.pad(np.ones((4, 4)), 2),
        np.maximum(np.pad(np.ones((2, 8)), ((3, 3), (0, 0))), np.pad(np.ones((8, 2)), ((0, 0), (3, 3)))),
        np.maximum(eye, np.roll(eye, 1, axis=1)),
        np.maximum(eye[::-1], np.roll(eye[::-1], 1, axis=1)),
        np.pad(np.ones((6, 6)), 1) - np.pad(np.ones((4, 4)), 2),
        np.indices((8, 8)).sum(axis=0) % 2 * 1.0,
    ]
    colours = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=float)
    for k in range(count):
        m = base[k % len(base)]
        c = colours[(k // len(base) + k) % len(colours)]
        masks.append(2.0 * c[:, None, None] * m[None] - 1.0)
    return np.stack(masks)


def make_toy_dataset(spec: ToyDatasetSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    centers = mode_centers(spec)
    # balanced labels: every mode gets floor or ceil of samples / modes points
    labels = rng.permutation(np.arange(spec.samples) % spec.modes)
    return centers[labels] + spec.sigma * rng.standard_normal((spec.samples, centers.shape[1]))


def mode_coverage(samples, centers, sigma: float) -> tuple[int, np.ndarray]:
    """Number of modes with at least one sample within ``3 sigma``; per-mode hit counts."""
    d = np.linalg.norm(np.asarray(samples)[:, None, :] - np.asarray(centers)[None], axis=-1)
    hits = (d <= 3 * sigma).sum(axis=0)
    return int((hits > 0).sum()), hits


# -- configuration and snapshots ---------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 2
    data_dim: int = 2
    gen_hidden: tuple = (32, 32)
    disc_hidden: tuple = (32, 32)
    slope: float = 0.2
    optimizer: str = "sgd"
    lr: float = 0.05
    batch_size: int = 64
    steps: int = 1000
    snapshot_every: int = 100
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    output_activation: str = "identity"

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.snapshot_every < 1 or self.steps % self.snapshot_every:
            raise ValueError("snapshot interval must divide the step count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen_hidden"] = list(self.gen_hidden)
        d["disc_hidden"] = list(self.disc_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("gen_hidden", "disc_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainSnapshot:
    step: int
    gen: NetworkSpec
    disc: NetworkSpec
    losses: dict = field(default_factory=dict)


def build_gan(cfg: TrainConfig, rng: np.random.Generator | None = None) -> tuple[NetworkSpec, NetworkSpec]:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    act = leaky_relu(cfg.slope) if cfg.slope > 0 else relu()
    out_act = Activation(cfg.output_activation)
    gen = mlp([cfg.latent_dim, *cfg.gen_hidden, cfg.data_dim], act, out_act, rng, "generator")
    disc = mlp([cfg.data_dim, *cfg.disc_hidden, 1], act, IDENTITY, rng, "discriminator")
    return gen, disc


def save_snapshot(snap: TrainSnapshot, stem, cfg: TrainConfig | None = None) -> dict:
    """Write ``<stem>.gen.bin``, ``<stem>.disc.bin`` and a sidecar ``<stem>.json``."""
    stem = str(stem)
    with open(stem + ".gen.bin", "wb") as fh:
        fh.write(save_model(snap.gen))
    with open(stem + ".disc.bin", "wb") as fh:
        fh.write(save_model(snap.disc))
    meta = {"step": snap.step, "losses": snap.losses,
            "config_hash": cfg.digest() if cfg is not None else None}
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
    return meta


def load_snapshot(stem) -> TrainSnapshot:
    stem = str(stem)
    with open(stem + ".gen.bin", "rb") as fh:
        gen = load_model(fh.read())
    with open(stem + ".disc.bin", "rb") as fh:
        disc = load_model(fh.read())
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    return TrainSnapshot(meta["step"], gen, disc, meta["losses"])


# -- losses and gradients ----------------------------------------------------

def _log_sigmoid(y):
    return -np.logaddexp(0.0, -y)


def _log_one_minus_sigmoid(y):
    return -np.logaddexp(0.0, y)


def _sigmoid(y):
    return 0.5 * (1.0 + np.tanh(0.5 * y))


def real_term(disc: NetworkSpec, x) -> float:
    """``mean log f(D(x))`` over a batch of real samples."""
    y = forward_batch(disc, np.asarray(x).reshape((-1,) + disc.input_shape))[-1].reshape(-1)
    return float(np.mean(_log_sigmoid(y)))


def fake_term(gen: NetworkSpec, disc: NetworkSpec, z) -> float:
    """``mean log(1 - f(D(G(z))))`` over a batch of latent codes."""
    x = forward_batch(gen, np.asarray(z).reshape((-1,) + gen.input_shape))[-1]
    y = forward_batch(disc, x.reshape((x.shape[0],) + disc.input_shape))[-1].reshape(-1)
    return float(np.mean(_log_one_minus_sigmoid(y)))


def real_term_grads(disc: NetworkSpec, x):
    """Gradient of the real term with respect to discriminator parameters."""
    x = np.asarray(x, dtype=np.float64).reshape((-1,) + disc.input_shape)
    acts, pres = forward_batch(disc, x, keep_pre=True)
    y = acts[-1].reshape(-1)
    dy = (1.0 - _sigmoid(y)) / y.size
    grads, _ = backward(disc, acts, pres, dy.reshape(acts[-1].shape))
    return grads


def fake_term_grads(gen: NetworkSpec, disc: NetworkSpec, z):
    """Gradients of the fake term for ``(generator params, discriminator params)``."""
    z = np.asarray(z, dtype=np.float64).reshape((-1,) + gen.input_shape)
    g_acts, g_pres = forward_batch(gen, z, keep_pre=True)
    x = g_acts[-1].reshape((z.shape[0],) + disc.input_shape)
    d_acts, d_pres = forward_batch(disc, x, keep_pre=True)
    y = d_acts[-1].reshape(-1)
    dy = -_sigmoid(y) / y.size
    d_grads, dx = backward(disc, d_acts, d_pres, dy.reshape(d_acts[-1].shape))
    g_grads, _ = backward(gen, g_acts, g_pres, dx.reshape(g_acts[-1].shape))
    return g_grads, d_grads


# -- optimizers ----------------------------------------------------------------

class _Optimizer:
    def __init__(self, net: NetworkSpec, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [None if not ly.has_params else (np.zeros_like(ly.weight), np.zeros_like(ly.bias))
                  for ly in net.layers]
        self.v = [None if m is None else (np.zeros_like(m[0]), np.zeros_like(m[1])) for m in self.m]

    def step(self, net: NetworkSpec, grads, ascend: bool) -> None:
        sign = 1.0 if ascend else -1.0
        lr = self.cfg.lr
        self.t += 1
        for idx, (layer, g) in enumerate(zip(net.layers, grads)):
            if g is None:
                continue
            if self.cfg.optimizer == "sgd":
                layer.weight += sign * lr * g[0]
                layer.bias += sign * lr * g[1]
                continue
            b1, b2 = self.cfg.beta1, self.cfg.beta2
            new = []
            for k, gk in enumerate(g):
                m = b1 * self.m[idx][k] + (1 - b1) * gk
                v = b2 * self.v[idx][k] + (1 - b2) * gk * gk
                new.append((m, v))
                mh = m / (1 - b1 ** self.t)
                vh = v / (1 - b2 ** self.t)
                upd = sign * lr * mh / (np.sqrt(vh) + 1e-8)
                if k == 0:
                    layer.weight += upd
                else:
                    layer.bias += upd
            self.m[idx] = (new[0][0], new[1][0])
            self.v[idx] = (new[0][1], new[1][1])


def generator_sgd_step(gen: NetworkSpec, disc: NetworkSpec, z, lr: float) -> NetworkSpec:
    """One plain SGD step of the generator on the fake term; returns a new network."""
    g_grads, _ = fake_term_grads(gen, disc, z)
    new = gen.copy()
    for layer, g in zip(new.layers, g_grads):
        if g is not None:
            layer.weight -= lr * g[0]
            layer.bias -= lr * g[1]
    return new


def _check(losses: dict, step: int) -> None:
    bad = [k for k, v in losses.items() if not np.isfinite(v)]
    if bad:
        raise DivergenceError(f"non-finite loss {bad} at step {step}: {losses}")


def train_gan(cfg: TrainConfig, data, log=None) -> list[TrainSnapshot]:
    """Alternate one discriminator and one generator step per iteration.

    Snapshots are taken before the first step and every ``snapshot_every``
    steps. ``log`` receives one dict per snapshot when given.
    """
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    gen, disc = build_gan(cfg, rng)
    if data.shape[1] != cfg.data_dim:
        raise ValueError(f"data has dimension {data.shape[1]}, config says {cfg.data_dim}")
    g_opt, d_opt = _Optimizer(gen, cfg), _Optimizer(disc, cfg)

    def losses_now():
        idx = np.random.default_rng(cfg.seed + 1).integers(0, len(data), size=256)
        zz = np.random.default_rng(cfg.seed + 2).standard_normal((256, cfg.latent_dim))
        return {"real_term": real_term(disc, data[idx]), "fake_term": fake_term(gen, disc, zz)}

    snaps = [TrainSnapshot(0, gen.copy(), disc.copy(), losses_now())]
    if log is not None:
        log({"step": 0, **snaps[0].losses})
    for step in range(1, cfg.steps + 1):
        x = data[rng.integers(0, len(data), size=cfg.batch_size)]
        z = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
        r_grads = real_term_grads(disc, x)
        _, f_grads = fake_term_grads(gen, disc, z)
        d_grads = [None if a is None else (a[0] + b[0], a[1] + b[1]) for a, b in zip(r_grads, f_grads)]
        d_opt.step(disc, d_grads, ascend=True)
        z = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
        g_grads, _ = fake_term_grads(gen, disc, z)
        g_opt.step(gen, g_grads, ascend=False)
        if step % cfg.snapshot_every == 0:
            losses = losses_now()
            _check(losses, step)
            snaps.append(TrainSnapshot(step, gen.copy(), disc.copy(), losses))
            if log is not None:
                log({"step": step, **losses})
    return snaps


# -- CLA dynamics ----------------------------------------------------------------

def track_cla_dynamics(snapshots, sites, z_fixed, cfg: ProbeConfig = ProbeConfig()) -> dict:
    """CLA of each site at ``z_fixed`` for every snapshot, keyed by site."""
    series = {site: [] for site in sites}
    for snap in snapshots:
        gen = snap.gen if isinstance(snap, TrainSnapshot) else snap
        for site in sites:
            series[site].append(cla(gen, site, z_fixed, cfg))
    return series


# -- planted-artifact fixtures ---------------------------------------------------

@dataclass
class PlantedFixture:
    planted: NetworkSpec
    clean: NetworkSpec
    center: np.ndarray
    radius: float
    site_layer: int
    unit: int
    amplitude: float

    def in_bump(self, z) -> np.ndarray:
        """Codes strictly inside the L1 ball where the planted unit is active."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return np.abs(z - self.center).sum(axis=1) < self.radius


def plant_artifact_generator(cfg: TrainConfig, center, radius: float, target_unit: int = 0,
                             amplitude: float = 1.0, injection: float = 3.0,
                             search_bound: float = 30.0) -> PlantedFixture:
    """Random relu generator with one unit that is a tent bump in latent space.

    Layer 1 holds ``relu(z_d - c_d)`` and ``relu(c_d - z_d)`` for every axis
    followed by random units; unit ``target_unit`` of layer 2 computes
    ``amplitude * relu(radius - |z - c|_1)``, which is positive only inside
    the L1 ball of ``radius`` around ``c``. Its outgoing weights are positive
    (scaled by ``injection``) so the bump perturbs the output. The clean
    reference is the same network with those outgoing weights zeroed.
    """
    center = np.asarray(center, dtype=np.float64).ravel()
    dz = cfg.latent_dim
    if center.size != dz:
        raise ValueError(f"bump center has {center.size} entries, latent_dim is {dz}")
    if not 0 < radius < search_bound:
        raise ValueError("bump radius must lie in (0, R)")
    if len(cfg.gen_hidden) < 2:
        raise ValueError("planted generator needs at least two hidden layers")
    w1, w2 = cfg.gen_hidden[0], cfg.gen_hidden[1]
    if w1 < 2 * dz + 1:
        raise ValueError(f"layer 1 width {w1} cannot hold {2 * dz} abs units plus random units")
    if not 0 <= target_unit < w2:
        raise ValueError(f"target unit {target_unit} outside layer 2 width {w2}")

    rng = np.random.default_rng(cfg.seed)
    n_rand1 = w1 - 2 * dz
    W1 = np.zeros((w1, dz))
    b1 = np.zeros(w1)
    W1[:dz] = np.eye(dz)
    b1[:dz] = -center
    W1[dz:2 * dz] = -np.eye(dz)
    b1[dz:2 * dz] = center
    W1[2 * dz:] = rng.normal(0, np.sqrt(2.0 / dz), size=(n_rand1, dz))
    b1[2 * dz:] = rng.normal(0, 0.1, size=n_rand1)

    W2 = np.zeros((w2, w1))
    W2[:, 2 * dz:] = rng.normal(0, np.sqrt(2.0 / n_rand1), size=(w2, n_rand1))
    b2 = rng.normal(0, 0.1, size=w2)
    W2[target_unit] = 0.0
    W2[target_unit, :2 * dz] = -amplitude
    b2[target_unit] = amplitude * radius

    layers = [dense_layer(W1, b1, relu()), dense_layer(W2, b2, relu())]
    widths = [w2, *cfg.gen_hidden[2:], cfg.data_dim]
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        act = Activation(cfg.output_activation) if last else relu()
        W = rng.normal(0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        b = rng.normal(0, 0.1, size=n_out)
        if i == 0:
            W[:, target_unit] = injection * np.abs(rng.normal(1.0, 0.25, size=n_out))
        layers.append(dense_layer(W, b, act))
    planted = NetworkSpec(layers, (dz,), "generator")
    clean = planted.copy()
    clean.layers[2].weight[:, target_unit] = 0.0
    return PlantedFixture(planted, clean, center, float(radius), 2, target_unit, float(amplitude))


def narrowed_bump_series(cfg: TrainConfig, center, radii, **kwargs) -> list[PlantedFixture]:
    """Planted generators identical except for a shrinking bump radius."""
    return [plant_artifact_generator(cfg, center, r, **kwargs) for r in radii]


def tent_curvature(amplitude: float, radius: float) -> float:
    """Axis curvature of the planted tent at its center: ``-amplitude / radius``."""
    return -amplitude / radius


def site_of(fixture: PlantedFixture) -> NeuronSite:
    return NeuronSite(fixture.site_layer, fixture.unit)


def series_means(series: list[ClaRecord]) -> np.ndarray:
    return np.array([r.mean for r in series])

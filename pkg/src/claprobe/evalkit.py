"""k-NN precision/recall, realism score and a raw-output path-length metric.

All distances are Euclidean on raw sample vectors ("surrogate-distance");
no pretrained embedding network is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import NetworkSpec, forward_batch

RS_CAP = 1e6


def pairwise_distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    # accumulate one coordinate at a time: a fixed left-to-right summation
    # order, independent of numpy's vectorized reduction strategy
    sq = np.zeros((a.shape[0], b.shape[0]))
    for d in range(a.shape[1]):
        sq += (a[:, None, d] - b[None, :, d]) ** 2
    return np.sqrt(sq)


class FeatureSet:
    """Fixed-dimension points with cached k-NN radii (self excluded)."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        self._radii = {}

    def __len__(self):
        return self.points.shape[0]

    def radii(self, k: int) -> np.ndarray:
        if k not in self._radii:
            self._radii[k] = knn_radii(self.points, k)
        return self._radii[k]


def knn_radii(points, k: int) -> np.ndarray:
    """Distance from each point to its ``k``-th nearest other point."""
    pts = points.points if isinstance(points, FeatureSet) else np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k={k} needs 1 <= k < set size {n}")
    d = pairwise_distances(pts, pts)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def _as_set(x) -> FeatureSet:
    return x if isinstance(x, FeatureSet) else FeatureSet(x)


def coverage(reference, queries, k: int) -> float:
    """Fraction of ``queries`` inside at least one reference k-NN ball."""
    reference, queries = _as_set(reference), _as_set(queries)
    r = reference.radii(k)
    d = pairwise_distances(queries.points, reference.points)
    return float((d <= r[None, :]).any(axis=1).mean())


def precision_recall(real, fake, k: int = 3) -> tuple[float, float]:
    real, fake = _as_set(real), _as_set(fake)
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("precision/recall needs non-empty sets")
    return coverage(real, fake, k), coverage(fake, real, k)


def realism_scores(real, x, k: int = 3, cap: float = RS_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Realism score of each row of ``x`` and a flag marking capped values.

    ``RS(x) = max_phi radius_k(phi) / |x - phi|`` over real points ``phi``.
    A coincident real point with zero radius is skipped; one with a positive
    radius gives an infinite ratio, reported as ``cap``.
    """
    real = _as_set(real)
    r = real.radii(k)
    xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = pairwise_distances(xs, real.points)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = r[None, :] / d
    ratio = np.where((d == 0) & (r[None, :] == 0), -np.inf, ratio)
    rs = ratio.max(axis=1)
    capped = ~np.isfinite(rs) & (rs > 0)
    rs = np.where(capped, cap, rs)
    rs = np.where(np.isneginf(rs), 0.0, rs)
    return rs, capped


def realism_score(real, x, k: int = 3, cap: float = RS_CAP) -> float:
    rs, _ = realism_scores(real, np.asarray(x, dtype=np.float64)[None, :], k, cap)
    return float(rs[0])


@dataclass(frozen=True)
class PplConfig:
    epsilon: float = 1e-4
    pairs: int = 1024
    interpolation: str = "lerp"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.interpolation not in ("lerp", "slerp"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def lerp(a, b, t):
    t = np.asarray(t)[..., None]
    return a + (b - a) * t


def slerp(a, b, t):
    t = np.asarray(t)[..., None]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    cos = np.clip((a * b).sum(-1, keepdims=True) / (na * nb), -1.0, 1.0)
    omega = np.arccos(cos)
    so = np.sin(omega)
    safe = so > 1e-12
    wa = np.where(safe, np.sin((1 - t) * omega) / np.where(safe, so, 1.0), 1 - t)
    wb = np.where(safe, np.sin(t * omega) / np.where(safe, so, 1.0), t)
    return wa * a + wb * b


def _outputs(net: NetworkSpec, z):
    out = forward_batch(net, z.reshape((-1,) + net.input_shape))[-1]
    return out.reshape(out.shape[0], -1)


def path_lengths(net: NetworkSpec, z1, z2, t, cfg: PplConfig) -> np.ndarray:
    """Per-pair ``|G(i(t + eps)) - G(i(t))|^2 / eps^2``."""
    interp = lerp if cfg.interpolation == "lerp" else slerp
    eps = cfg.epsilon
    a = _outputs(net, interp(z1, z2, t))
    b = _outputs(net, interp(z1, z2, t + eps))
    return ((b - a) ** 2).sum(axis=1) / eps ** 2


def ppl_pairs(net: NetworkSpec, cfg: PplConfig, seed: int):
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal((cfg.pairs, net.latent_dim))
    z2 = rng.standard_normal((cfg.pairs, net.latent_dim))
    t = rng.uniform(0.0, 1.0, size=cfg.pairs)
    return z1, z2, t


def ppl(net: NetworkSpec, cfg: PplConfig = PplConfig(), seed: int = 0) -> float:
    z1, z2, t = ppl_pairs(net, cfg, seed)
    return float(np.mean(path_lengths(net, z1, z2, t, cfg)))


def ppl_at(net: NetworkSpec, codes, cfg: PplConfig = PplConfig(), seed: int = 0) -> np.ndarray:
    """Path length leaving each code toward a random partner (``t = 0``).

    Used to score a group of codes rather than the whole latent space.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    rng = np.random.default_rng(seed)
    partners = rng.standard_normal(codes.shape)
    return path_lengths(net, codes, partners, np.zeros(codes.shape[0]), cfg)

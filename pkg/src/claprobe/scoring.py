"""Per-sample artifact score and High/Low/random group selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .probe import ClaRecord


@dataclass(frozen=True)
class SampleScore:
    latent_id: int
    layer: int
    score: float
    contributing: int


@dataclass(frozen=True)
class GroupSelection:
    kind: str
    members: tuple
    fraction: float
    seed: int | None = None


def score_terms(means, activations) -> np.ndarray:
    """Per-neuron terms of the score.

    Concave curvature counts only under positive activation and convex
    curvature only under negative activation, with ``sign(0) = 0``.
    """
    c = np.asarray(means, dtype=np.float64)
    h = np.asarray(activations, dtype=np.float64)
    return np.abs(np.minimum(c, 0.0) * np.sign(np.maximum(h, 0.0))
                  + np.maximum(c, 0.0) * np.sign(np.minimum(h, 0.0)))


def sample_score(records: list[ClaRecord]) -> SampleScore:
    if not records:
        raise ValueError("cannot score an empty record list")
    ids = {r.latent_id for r in records}
    layers = {r.site.layer for r in records}
    if len(ids) != 1:
        raise ValueError(f"records mix latent ids {sorted(ids)}")
    if len(layers) != 1:
        raise ValueError(f"records mix layers {sorted(layers)}")
    terms = score_terms([r.mean for r in records], [r.activation for r in records])
    # fsum is exactly rounded, so record order cannot change the score
    return SampleScore(ids.pop(), layers.pop(), math.fsum(terms), int(np.count_nonzero(terms)))


def group_size(n: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * n + 1e-9)))


def rank_and_select(scores: list[SampleScore], fraction: float, seed: int = 0) -> dict[str, GroupSelection]:
    """High-score, low-score and random groups of ``floor(fraction * N)`` codes each.

    Ranking is by descending score with ties broken by ascending latent id.
    The random group is drawn from the whole pool and may overlap the others.
    """
    if not scores:
        raise ValueError("no scores to rank")
    if not 0 < fraction <= 0.5:
        raise ValueError("fraction must lie in (0, 0.5]")
    ranked = sorted(scores, key=lambda s: (-s.score, s.latent_id))
    m = group_size(len(ranked), fraction)
    high = tuple(s.latent_id for s in ranked[:m])
    low = tuple(s.latent_id for s in ranked[len(ranked) - m:][::-1])
    pool = sorted(s.latent_id for s in scores)
    rng = np.random.default_rng(seed)
    rand = tuple(int(pool[i]) for i in rng.choice(len(pool), size=m, replace=False))
    return {
        "high_cla": GroupSelection("high_cla", high, fraction),
        "low_cla": GroupSelection("low_cla", low, fraction),
        "random": GroupSelection("random", rand, fraction, seed),
    }


def ranking_auc(scores, positives) -> float:
    """Probability that a positive code outscores a negative one (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    pos, neg = scores[positives], scores[~positives]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both positive and negative codes")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))

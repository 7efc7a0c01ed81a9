"""Unit-level CLA aggregation and dampening of artifact units."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .netcore import NetworkSpec, ShapeError, forward_batch, forward_from
from .probe import ClaRecord


@dataclass(frozen=True)
class UnitScore:
    layer: int
    unit: int
    mean: float
    count: int


@dataclass(frozen=True)
class CorrectionConfig:
    stop_layer: int = 4
    num_units: int = 100
    maintain_ratio: float = 0.9
    signed: bool = False

    def __post_init__(self):
        if not 0.0 <= self.maintain_ratio <= 1.0:
            raise ValueError("maintain ratio must lie in [0, 1]")
        if self.num_units < 1:
            raise ValueError("num_units must be >= 1")


def unit_cla(records: list[ClaRecord], layer: int) -> list[UnitScore]:
    """Mean CLA over the spatial neurons of each unit of ``layer``."""
    members = defaultdict(list)
    for r in records:
        if r.site.layer == layer:
            members[r.site.unit].append(r.mean)
    if not members:
        raise ValueError(f"no records for layer {layer}")
    out = []
    for unit in sorted(members):
        vals = members[unit]
        out.append(UnitScore(layer, unit, math.fsum(vals) / len(vals), len(vals)))
    return out


def identify_artifact_units(unit_scores: list[UnitScore], num_units: int, signed: bool = False) -> list[int]:
    """Units with the largest |mean CLA| (most negative mean when ``signed``)."""
    if num_units < 1:
        raise ValueError("num_units must be >= 1")
    if num_units > len(unit_scores):
        raise ValueError(f"asked for {num_units} units, only {len(unit_scores)} available")
    if signed:
        key = lambda u: (u.mean, u.unit)
    else:
        key = lambda u: (-abs(u.mean), u.unit)
    return [u.unit for u in sorted(unit_scores, key=key)[:num_units]]


def dampen(h: np.ndarray, units, ratio: float) -> np.ndarray:
    """Scale the listed channels of ``h`` (unit axis first) by ``ratio``."""
    out = np.array(h, dtype=np.float64, copy=True)
    idx = list(units)
    if idx:
        out[idx] = ratio * out[idx]
    return out


def correct(net: NetworkSpec, z, cfg: CorrectionConfig, units) -> tuple[np.ndarray, np.ndarray]:
    """Original and corrected outputs for one latent code."""
    l = cfg.stop_layer
    if not 1 <= l <= net.depth:
        raise ShapeError(f"stopping layer {l} outside 1..{net.depth}")
    n_units = net.shape_of(l)[0]
    units = [int(u) for u in units]
    bad = [u for u in units if not 0 <= u < n_units]
    if bad:
        raise ValueError(f"unit ids {bad} outside layer {l} with {n_units} units")
    acts = forward_batch(net, np.asarray(z, dtype=np.float64).reshape(net.input_shape))
    original = acts[-1][0]
    h_l = acts[l][0]
    corrected = forward_from(net, l, dampen(h_l, units, cfg.maintain_ratio))
    return original, corrected

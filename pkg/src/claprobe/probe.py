"""Change points and curvature of local activation (CLA) along latent axes.

For a neuron ``g`` and latent code ``z0`` each axis ``d`` is scanned on the
grid ``r_k = k * R / n`` for ``k = -n..n``. The nearest zero crossing on
each side of ``r = 0`` is the change point (the bound ``±R`` when there is
none) and the axis curvature is the second divided difference through the
left change point, the centre and the right change point::

    C(d, z0) = (s_right - s_left) / (p_right - p_left)
    s_side   = (g(z0 + p_side * e_d) - g(z0)) / p_side

Crossings are located on the pre-activation, which is affine between kinks,
by linear interpolation; the neuron value at an interpolated crossing is
zero by construction. One forward batch per axis serves every neuron of the
layer, so ``layer_cla`` costs ``D_z * 2n + 1`` latent evaluations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .netcore import (
    NetworkSpec,
    NeuronSite,
    UnsupportedActivationError,
    check_site,
    forward_batch,
    iter_sites,
)


@dataclass(frozen=True)
class ProbeConfig:
    search_bound: float = 30.0
    grid_divisions: int = 20
    zero_tol: float = 1e-9

    def __post_init__(self):
        if not self.search_bound > 0:
            raise ValueError("search bound R must be positive")
        if self.grid_divisions < 2:
            raise ValueError("grid_divisions must be >= 2")
        if self.zero_tol < 0:
            raise ValueError("zero tolerance must be non-negative")

    def grid(self) -> np.ndarray:
        n = self.grid_divisions
        g = np.arange(-n, n + 1) * self.search_bound / n
        g[0], g[-1] = -self.search_bound, self.search_bound
        return g


@dataclass(frozen=True)
class ChangePointPair:
    left: float
    right: float
    left_is_bound: bool = False
    right_is_bound: bool = False
    left_value: float = 0.0
    right_value: float = 0.0


@dataclass
class ClaRecord:
    site: NeuronSite
    axis_curvatures: np.ndarray
    mean: float
    activation: float
    latent_id: int = 0
    change_points: np.ndarray = field(default=None, repr=False)


@dataclass
class ProbeStats:
    """Counts latent points pushed through the network."""

    evaluations: int = 0


def expected_evaluations(latent_dim: int, grid_divisions: int) -> int:
    """Latent evaluations of one CLA call: every off-centre grid point plus the centre once."""
    return latent_dim * 2 * grid_divisions + 1


def _require_piecewise_linear(net: NetworkSpec, l: int) -> None:
    if not 1 <= l <= net.depth:
        raise ValueError(f"layer {l} outside 1..{net.depth}")
    act = net.layers[l - 1].activation
    if not act.piecewise_linear:
        raise UnsupportedActivationError(
            f"CLA is defined on relu/leaky_relu layers; layer {l} uses {act.kind}"
        )


def _axis_points(z0: np.ndarray, axis: int, offsets: np.ndarray) -> np.ndarray:
    pts = np.repeat(z0[None, :], offsets.size, axis=0)
    pts[:, axis] = z0[axis] + offsets
    return pts


def _evaluate(net, l, points, stats):
    acts, pres = forward_batch(net, points.reshape((-1,) + net.input_shape), stop=l, keep_pre=True)
    if stats is not None:
        stats.evaluations += points.shape[0]
    b = points.shape[0]
    return pres[-1].reshape(b, -1), acts[-1].reshape(b, -1)


def _scan_side(r, pre, post, tol):
    """First crossing walking outward along ``r`` (r[0] is the centre).

    ``pre``/``post`` have shape ``(steps + 1, neurons)``. Returns change
    point, neuron value there and bound flag, each of shape ``(neurons,)``.
    """
    steps, count = pre.shape[0] - 1, pre.shape[1]
    point = np.full(count, r[-1])
    value = post[-1].copy()
    bound = np.ones(count, dtype=bool)
    open_ = np.ones(count, dtype=bool)
    for k in range(steps):
        a, b = pre[k], pre[k + 1]
        hit_grid = open_ & (np.abs(b) <= tol)
        straddle = open_ & ~hit_grid & (np.abs(a) > tol) & (a * b < 0)
        if hit_grid.any():
            point[hit_grid] = r[k + 1]
        if straddle.any():
            frac = a[straddle] / (a[straddle] - b[straddle])
            point[straddle] = r[k] + (r[k + 1] - r[k]) * frac
        found = hit_grid | straddle
        value[found] = 0.0
        bound[found] = False
        open_ &= ~found
        if not open_.any():
            break
    return point, value, bound


def _axis_change_points(net, l, z0, axis, cfg, stats):
    """Change points for every neuron of layer ``l`` along one axis.

    Returns arrays ``(left, right, left_val, right_val, left_bound,
    right_bound)``, each of length ``neurons``, plus the centre value.
    """
    grid = cfg.grid()
    n = cfg.grid_divisions
    offsets = np.concatenate([grid[:n], grid[n + 1:]])
    pre_c, post_c = _evaluate(net, l, z0[None, :], None)
    pre_o, post_o = _evaluate(net, l, _axis_points(z0, axis, offsets), stats)
    pre = np.concatenate([pre_o[:n], pre_c, pre_o[n:]])
    post = np.concatenate([post_o[:n], post_c, post_o[n:]])
    right = _scan_side(grid[n:], pre[n:], post[n:], cfg.zero_tol)
    left = _scan_side(grid[n::-1], pre[n::-1], post[n::-1], cfg.zero_tol)
    return left, right, post_c[0]


def _curvature(left_p, right_p, left_v, right_v, centre, tol):
    """Second divided difference through (left, centre, right); 0 when degenerate."""
    left_p = np.asarray(left_p, dtype=np.float64)
    right_p = np.asarray(right_p, dtype=np.float64)
    degenerate = ((right_p - left_p) < tol) | (np.abs(left_p) < tol) | (np.abs(right_p) < tol)
    degenerate |= np.abs(centre) <= tol
    with np.errstate(divide="ignore", invalid="ignore"):
        s_right = (right_v - centre) / right_p
        s_left = (left_v - centre) / left_p
        c = (s_right - s_left) / (right_p - left_p)
    return np.where(degenerate, 0.0, c)


def find_change_points(net: NetworkSpec, site: NeuronSite, z0, axis: int,
                       cfg: ProbeConfig = ProbeConfig(), stats: ProbeStats | None = None) -> ChangePointPair:
    check_site(net, site)
    _require_piecewise_linear(net, site.layer)
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    if z0.size != net.latent_dim:
        raise ValueError(f"z0 has {z0.size} entries, expected {net.latent_dim}")
    if stats is not None:
        stats.evaluations += 1
    left, right, centre = _axis_change_points(net, site.layer, z0, axis, cfg, stats)
    j = int(np.ravel_multi_index(site.index, net.shape_of(site.layer)))
    if abs(centre[j]) <= cfg.zero_tol:
        return ChangePointPair(0.0, 0.0)
    return ChangePointPair(
        left=float(left[0][j]), right=float(right[0][j]),
        left_is_bound=bool(left[2][j]), right_is_bound=bool(right[2][j]),
        left_value=float(left[1][j]), right_value=float(right[1][j]),
    )


def axis_curvature(net: NetworkSpec, site: NeuronSite, z0, axis: int, cp: ChangePointPair,
                   cfg: ProbeConfig = ProbeConfig()) -> float:
    """Curvature along one axis given its change points.

    The neuron is re-evaluated at ``z0``; the values at the change points are
    those recorded by :func:`find_change_points`.
    """
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    _, post = _evaluate(net, site.layer, z0[None, :], None)
    j = int(np.ravel_multi_index(site.index, net.shape_of(site.layer)))
    return float(_curvature(cp.left, cp.right, cp.left_value, cp.right_value,
                            post[0, j], cfg.zero_tol))


def layer_cla(net: NetworkSpec, l: int, z0, cfg: ProbeConfig = ProbeConfig(), latent_id: int = 0,
              workers: int = 1, stats: ProbeStats | None = None) -> list[ClaRecord]:
    """CLA records for every neuron of layer ``l`` at ``z0``.

    With ``workers > 1`` the latent axes are scanned concurrently; the merge
    is by axis index so the result equals the sequential one.
    """
    _require_piecewise_linear(net, l)
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    if z0.size != net.latent_dim:
        raise ValueError(f"z0 has {z0.size} entries, expected {net.latent_dim}")
    dz = net.latent_dim
    tol = cfg.zero_tol
    _, post_c = _evaluate(net, l, z0[None, :], stats)
    centre = post_c[0]

    def run(axis):
        left, right, _ = _axis_change_points(net, l, z0, axis, cfg, stats)
        curv = _curvature(left[0], right[0], left[1], right[1], centre, tol)
        return curv, left[0], right[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(dz)))
    else:
        results = [run(axis) for axis in range(dz)]

    curv = np.stack([r[0] for r in results], axis=1)          # (neurons, D_z)
    inactive = np.abs(centre) <= tol
    lefts = np.stack([np.where(inactive, 0.0, r[1]) for r in results], axis=1)
    rights = np.stack([np.where(inactive, 0.0, r[2]) for r in results], axis=1)
    means = curv.sum(axis=1) / dz
    records = []
    for j, site in enumerate(iter_sites(net, l)):
        records.append(ClaRecord(
            site=site,
            axis_curvatures=curv[j].copy(),
            mean=float(means[j]),
            activation=float(centre[j]),
            latent_id=latent_id,
            change_points=np.stack([lefts[j], rights[j]], axis=1),
        ))
    return records


def cla(net: NetworkSpec, site: NeuronSite, z0, cfg: ProbeConfig = ProbeConfig(), latent_id: int = 0,
        stats: ProbeStats | None = None) -> ClaRecord:
    """CLA of a single neuron (evaluates its whole layer, returns one record)."""
    check_site(net, site)
    records = layer_cla(net, site.layer, z0, cfg, latent_id, stats=stats)
    j = int(np.ravel_multi_index(site.index, net.shape_of(site.layer)))
    return records[j]


def activation_profile(net: NetworkSpec, site: NeuronSite, z0, axis: int,
                       cfg: ProbeConfig = ProbeConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Grid offsets ``r`` and neuron values ``g(z0 + r e_d)`` used by the scan."""
    check_site(net, site)
    _require_piecewise_linear(net, site.layer)
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    r = cfg.grid()
    _, post = _evaluate(net, site.layer, _axis_points(z0, axis, r), None)
    j = int(np.ravel_multi_index(site.index, net.shape_of(site.layer)))
    return r, post[:, j].copy()

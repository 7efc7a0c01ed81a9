"""Linearized view of a generator/discriminator pair at one latent code.

At an anchor ``z0`` every piecewise-linear layer acts as a fixed affine map
(negative-side neurons have their weights scaled by the leaky slope). The
generator tail after layer ``l`` collapses to ``x = A h_l + a`` and the
discriminator to ``y = w_D . x + b_D``, so the logit splits into per-neuron
contributions ``c_i = (w_D . A[:, i]) h_{l,i}`` plus a constant offset.

:func:`simulate_update` takes one SGD step on the generator loss
``log(1 - sigmoid(D(G(z0))))`` for a single neuron's incoming weights. The
weight row moves by ``delta_i * h_{l-1}`` and, treating the bias as the
weight of a constant input 1, the bias moves by ``delta_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import NetworkSpec, UnsupportedActivationError, forward_batch

CASES = ("pos_h_pos_delta", "pos_h_neg_delta", "neg_h_pos_delta", "neg_h_neg_delta")
NEGATIVE_CASES = ("pos_h_neg_delta", "neg_h_pos_delta")


class SingularityError(ArithmeticError):
    """sigmoid(D(G(z0))) rounds to 1, so the generator loss gradient blows up."""


def sigmoid(y):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(y, dtype=np.float64)))


@dataclass
class Linearization:
    anchor: np.ndarray
    split: int
    gen_slopes: list          # per generator layer, slope of each neuron at z0
    disc_slopes: list
    gen_matrix: np.ndarray    # (D_x, D_l): d output / d h_l
    gen_offset: np.ndarray    # (D_x,)
    disc_vector: np.ndarray   # (D_x,)
    disc_offset: float
    h_split: np.ndarray       # h_l at z0, flattened
    output: np.ndarray        # G(z0), flattened
    logit: float              # D(G(z0))

    def linear_output(self, h_l) -> np.ndarray:
        return self.gen_matrix @ np.ravel(h_l) + self.gen_offset

    def linear_logit(self, h_l) -> float:
        return float(self.disc_vector @ self.linear_output(h_l) + self.disc_offset)

    @property
    def neuron_weights(self) -> np.ndarray:
        """``w_D . A[:, i]`` for every neuron ``i`` of the split layer."""
        return self.disc_vector @ self.gen_matrix


@dataclass(frozen=True)
class ContributionRecord:
    neuron: int
    contribution: float
    sign: str
    case: str | None


@dataclass
class UpdateSimResult:
    neuron: int
    eta: float
    delta: float
    weight: np.ndarray
    weight_after: np.ndarray
    bias: float
    bias_after: float
    h_prev: np.ndarray
    pre: float
    pre_after: float
    activation: float
    activation_after: float
    distance: float
    distance_after: float

    @property
    def eq8_lhs(self) -> float:
        return float(self.h_prev @ self.weight_after)

    @property
    def eq8_rhs(self) -> float:
        return float(self.h_prev @ self.weight + self.delta * (self.h_prev @ self.h_prev))

    @property
    def negative_contribution(self) -> bool:
        return self.activation * self.delta < 0

    def shrink_threshold(self) -> float:
        """Largest learning rate for which the pre-activation moves toward 0 without crossing it."""
        per_eta = abs(self.delta / self.eta) * (self.h_prev @ self.h_prev + 1.0)
        return float(abs(self.pre) / per_eta) if per_eta > 0 else np.inf


def _slopes(net: NetworkSpec, pres, split: int, what: str):
    """Per-layer neuron slopes at the anchor (None for tanh layers up to ``split``)."""
    out = []
    for idx in range(1, net.depth + 1):
        act = net.layers[idx - 1].activation
        if act.kind == "tanh":
            if idx > split:
                raise UnsupportedActivationError(
                    f"{what} layer {idx} uses tanh; linearization needs piecewise-linear layers")
            out.append(None)
            continue
        out.append(np.where(pres[idx][0] >= 0, 1.0, act.negative_slope))
    return out


def _affine_tail(net: NetworkSpec, start: int, slopes, n_in: int):
    """Jacobian and offset of the masked layers ``start+1..L`` as a map on flat ``h_start``."""
    shape = net.shape_of(start)
    basis = np.eye(n_in).reshape((n_in,) + shape)
    zero = np.zeros((1,) + shape)
    x, c = basis, zero
    for k, layer in enumerate(net.layers[start:]):
        s = slopes[k][None]
        x = s * layer.linear(x, with_bias=False)
        c = s * layer.linear(c, with_bias=True)
    return x.reshape(n_in, -1).T, c.reshape(-1)


def linearize(gen: NetworkSpec, disc: NetworkSpec, z0, split: int) -> Linearization:
    if not 0 <= split <= gen.depth:
        raise ValueError(f"split layer {split} outside 0..{gen.depth}")
    if disc.latent_dim != int(np.prod(gen.shape_of(gen.depth))):
        raise ValueError("discriminator input does not match generator output")
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    g_acts, g_pres = forward_batch(gen, z0.reshape(gen.input_shape), keep_pre=True)
    gen_slopes = _slopes(gen, g_pres, split, "generator")
    x = g_acts[-1].reshape(1, -1)
    d_acts, d_pres = forward_batch(disc, x.reshape((1,) + disc.input_shape), keep_pre=True)
    disc_slopes = _slopes(disc, d_pres, 0, "discriminator")
    h_split = g_acts[split][0].ravel()
    gen_matrix, gen_offset = _affine_tail(gen, split, gen_slopes[split:], h_split.size)
    dv, doff = _affine_tail(disc, 0, disc_slopes, disc.latent_dim)
    return Linearization(
        anchor=z0, split=split, gen_slopes=gen_slopes, disc_slopes=disc_slopes,
        gen_matrix=gen_matrix, gen_offset=gen_offset,
        disc_vector=dv.reshape(-1), disc_offset=float(doff[0]),
        h_split=h_split, output=x[0], logit=float(d_acts[-1].ravel()[0]),
    )


def _sign_label(v: float) -> str:
    return "positive" if v > 0 else "negative" if v < 0 else "zero"


def update_case(h: float, delta: float) -> str | None:
    """Update case of a neuron, or None for an inactive (h == 0) neuron."""
    if h == 0:
        return None
    return ("pos_h_" if h > 0 else "neg_h_") + ("pos_delta" if delta >= 0 else "neg_delta")


def contributions(lin: Linearization, h_l=None) -> list[ContributionRecord]:
    h = lin.h_split if h_l is None else np.ravel(np.asarray(h_l, dtype=np.float64))
    if h.size != lin.gen_matrix.shape[1]:
        raise ValueError(f"h_l has {h.size} entries, linearization expects {lin.gen_matrix.shape[1]}")
    weights = lin.neuron_weights
    out = []
    for i, (w, hi) in enumerate(zip(weights, h)):
        c = float(w * hi)
        out.append(ContributionRecord(i, c, _sign_label(c), update_case(hi, w)))
    return out


def offset_term(lin: Linearization) -> float:
    """Part of the linearized logit not carried by any split-layer neuron."""
    return float(lin.disc_vector @ lin.gen_offset + lin.disc_offset)


def simulate_update(gen: NetworkSpec, disc: NetworkSpec, z0, layer: int, neuron: int, eta: float) -> UpdateSimResult:
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    ly = gen.layers[layer - 1]
    if ly.kind != "dense":
        raise ValueError(f"update simulation needs a dense layer, layer {layer} is {ly.kind}")
    lin = linearize(gen, disc, z0, layer)
    p = sigmoid(lin.logit)
    if p >= 1.0:
        raise SingularityError("sigmoid(D(G(z0))) == 1; c0 = 1/(1 - f) is singular")
    c0 = 1.0 / (1.0 - p)
    fprime = p * (1.0 - p)
    slopes = lin.gen_slopes[layer - 1]
    if slopes is None:
        raise UnsupportedActivationError(f"layer {layer} is not piecewise-linear")
    own_slope = slopes.ravel()[neuron]
    delta = float(eta * c0 * fprime * lin.neuron_weights[neuron] * own_slope)

    h_prev = forward_batch(gen, np.ravel(z0).reshape(gen.input_shape), stop=layer - 1)[-1][0].ravel()
    w = ly.weight[neuron].copy()
    b = float(ly.bias[neuron])
    w_after = w + delta * h_prev
    b_after = b + delta
    pre = float(w @ h_prev + b)
    pre_after = float(w_after @ h_prev + b_after)
    act = ly.activation
    return UpdateSimResult(
        neuron=neuron, eta=eta, delta=delta,
        weight=w, weight_after=w_after, bias=b, bias_after=b_after, h_prev=h_prev,
        pre=pre, pre_after=pre_after,
        activation=float(act(np.array(pre))), activation_after=float(act(np.array(pre_after))),
        distance=abs(pre) / float(np.linalg.norm(w)),
        distance_after=abs(pre_after) / float(np.linalg.norm(w_after)),
    )


@dataclass
class CaseSummary:
    counts: dict
    mean_distance_delta: dict
    mean_activation_delta: dict
    results: list


def classify_update_cases(gen: NetworkSpec, disc: NetworkSpec, z0, layer: int, eta: float = 1e-4) -> CaseSummary:
    """Histogram of active neurons over the four (sign h, sign delta) cases."""
    lin = linearize(gen, disc, z0, layer)
    counts = {c: 0 for c in CASES}
    dist = {c: [] for c in CASES}
    actd = {c: [] for c in CASES}
    results = []
    for i, hi in enumerate(lin.h_split):
        if hi == 0:
            continue
        res = simulate_update(gen, disc, z0, layer, i, eta)
        case = update_case(hi, res.delta)
        counts[case] += 1
        dist[case].append(res.distance_after - res.distance)
        actd[case].append(abs(res.activation_after) - abs(res.activation))
        results.append((case, res))

    def mean(v):
        return float(np.mean(v)) if v else None

    return CaseSummary(counts, {c: mean(v) for c, v in dist.items()},
                       {c: mean(v) for c, v in actd.items()}, results)

"""Forward engine for small piecewise-linear feedforward networks.

Layers are dense, direct 2-d convolution, or nearest-neighbour upsampling,
evaluated in double precision. Activations are addressed as
``forward(net, z)[l]`` with ``l = 0`` the input and ``l = L`` the output.

Dense and conv contractions are written as broadcast-and-sum instead of
BLAS calls so that the value computed for one latent code does not depend on
how many other codes share the batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAGIC = b"CLAPROBE"
FORMAT_VERSION = 1

LAYER_KINDS = ("dense", "conv2d", "upsample_nearest")
ACTIVATION_KINDS = ("relu", "leaky_relu", "tanh", "identity")


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""


class UnsupportedActivationError(ValueError):
    """Raised when an operation needs a piecewise-linear activation."""


class ModelFormatError(ValueError):
    """Raised for malformed, truncated or foreign model containers."""


@dataclass(frozen=True)
class Activation:
    kind: str = "identity"
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.slope < 0:
            raise ValueError("leaky slope must be non-negative")
        if self.kind != "leaky_relu" and self.slope != 0.0:
            raise ValueError(f"slope only applies to leaky_relu, got {self.kind}")

    @property
    def piecewise_linear(self) -> bool:
        return self.kind in ("relu", "leaky_relu")

    @property
    def negative_slope(self) -> float:
        """Slope on the negative half-line (1 for identity, 0 for relu)."""
        if self.kind == "identity":
            return 1.0
        if self.kind == "relu":
            return 0.0
        if self.kind == "leaky_relu":
            return self.slope
        raise UnsupportedActivationError("tanh has no constant negative slope")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return x
        if self.kind == "relu" or (self.kind == "leaky_relu" and self.slope == 0.0):
            return np.where(x >= 0, x, 0.0)
        if self.kind == "leaky_relu":
            return np.where(x >= 0, x, self.slope * x)
        return np.tanh(x)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        """Derivative at the pre-activation ``x``; the kink takes the right slope."""
        if self.kind == "tanh":
            return 1.0 - np.tanh(x) ** 2
        return np.where(x >= 0, 1.0, self.negative_slope)


def relu() -> Activation:
    return Activation("relu")


def leaky_relu(slope: float = 0.2) -> Activation:
    return Activation("leaky_relu", float(slope))


IDENTITY = Activation("identity")


@dataclass
class Layer:
    """One layer: a linear map followed by an elementwise activation.

    ``weight`` has shape ``(n_out, n_in)`` for dense layers (row ``i`` is the
    incoming weight vector of neuron ``i``) and ``(c_out, c_in, k, k)`` for
    conv2d. Dense layers flatten their input and reshape their output to
    ``out_shape`` which lets a dense stem feed a conv stack.
    """

    kind: str
    in_shape: tuple
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    activation: Activation = IDENTITY
    out_shape: tuple | None = None
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    factor: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.in_shape = tuple(int(s) for s in self.in_shape)
        if self.weight is not None:
            self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.kind == "dense":
            n_in = int(np.prod(self.in_shape))
            if self.weight is None or self.weight.ndim != 2:
                raise ShapeError("dense layer needs a 2-d weight")
            n_out = self.weight.shape[0]
            if self.weight.shape[1] != n_in:
                raise ShapeError(
                    f"dense weight expects {self.weight.shape[1]} inputs, "
                    f"in_shape {self.in_shape} has {n_in}"
                )
            out = (n_out,) if self.out_shape is None else tuple(int(s) for s in self.out_shape)
            if int(np.prod(out)) != n_out:
                raise ShapeError(f"out_shape {out} does not hold {n_out} units")
            self.out_shape = out
            if self.bias is None:
                self.bias = np.zeros(n_out)
            if self.bias.shape != (n_out,):
                raise ShapeError(f"dense bias shape {self.bias.shape} != ({n_out},)")
        elif self.kind == "conv2d":
            if len(self.in_shape) != 3:
                raise ShapeError("conv2d input must be (channels, rows, cols)")
            if self.weight is None or self.weight.ndim != 4:
                raise ShapeError("conv2d needs a 4-d weight")
            c_out, c_in, kh, kw = self.weight.shape
            if kh != kw:
                raise ShapeError("only square kernels are supported")
            if c_in != self.in_shape[0]:
                raise ShapeError(f"conv2d expects {c_in} channels, got {self.in_shape[0]}")
            if self.stride < 1 or self.padding < 0:
                raise ShapeError("conv stride must be >= 1 and padding >= 0")
            self.kernel_size = kh
            rows = (self.in_shape[1] + 2 * self.padding - kh) // self.stride + 1
            cols = (self.in_shape[2] + 2 * self.padding - kw) // self.stride + 1
            if rows < 1 or cols < 1:
                raise ShapeError("conv2d kernel larger than padded input")
            self.out_shape = (c_out, rows, cols)
            if self.bias is None:
                self.bias = np.zeros(c_out)
            if self.bias.shape != (c_out,):
                raise ShapeError(f"conv2d bias shape {self.bias.shape} != ({c_out},)")
        else:
            if len(self.in_shape) != 3:
                raise ShapeError("upsample_nearest input must be (channels, rows, cols)")
            if self.factor < 1:
                raise ShapeError("upsample factor must be >= 1")
            c, h, w = self.in_shape
            self.out_shape = (c, h * self.factor, w * self.factor)

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")

    def linear(self, x: np.ndarray, with_bias: bool = True) -> np.ndarray:
        """Pre-activation for a batch ``x`` of shape ``(B, *in_shape)``."""
        if self.kind == "dense":
            flat = x.reshape(x.shape[0], -1)
            pre = np.sum(flat[:, None, :] * self.weight[None, :, :], axis=-1)
            if with_bias:
                pre = pre + self.bias
            return pre.reshape((x.shape[0],) + self.out_shape)
        if self.kind == "conv2d":
            return _conv2d(x, self.weight, self.bias if with_bias else None,
                           self.stride, self.padding, self.out_shape)
        f = self.factor
        return np.repeat(np.repeat(x, f, axis=2), f, axis=3)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.activation(self.linear(x))


def _conv2d(x, weight, bias, stride, padding, out_shape):
    batch = x.shape[0]
    c_out, rows, cols = out_shape
    k = weight.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((batch, c_out, rows, cols))
    for ki in range(k):
        for kj in range(k):
            patch = x[:, :, ki:ki + stride * (rows - 1) + 1:stride,
                      kj:kj + stride * (cols - 1) + 1:stride]
            tap = weight[:, :, ki, kj]
            out += np.sum(patch[:, None] * tap[None, :, :, None, None], axis=2)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


@dataclass
class NetworkSpec:
    layers: list
    input_shape: tuple
    role: str = "generator"

    def __post_init__(self):
        if self.role not in ("generator", "discriminator"):
            raise ValueError(f"unknown role {self.role!r}")
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shape = self.input_shape
        for idx, layer in enumerate(self.layers, start=1):
            if int(np.prod(layer.in_shape)) != int(np.prod(shape)) or (
                layer.kind != "dense" and layer.in_shape != shape
            ):
                raise ShapeError(
                    f"layer {idx} ({layer.kind}) expects input {layer.in_shape}, "
                    f"previous layer produces {shape}"
                )
            shape = layer.out_shape
        if self.role == "discriminator" and int(np.prod(shape)) != 1:
            raise ShapeError("discriminator output must be a single scalar")

    @property
    def latent_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def depth(self) -> int:
        return len(self.layers)

    def shape_of(self, l: int) -> tuple:
        """Activation shape of ``h_l`` (``l = 0`` is the input)."""
        if l == 0:
            return self.input_shape
        return self.layers[l - 1].out_shape

    def copy(self) -> "NetworkSpec":
        return NetworkSpec(
            [
                Layer(
                    kind=ly.kind, in_shape=ly.in_shape,
                    weight=None if ly.weight is None else ly.weight.copy(),
                    bias=None if ly.bias is None or ly.kind == "upsample_nearest" else ly.bias.copy(),
                    activation=ly.activation, out_shape=ly.out_shape,
                    kernel_size=ly.kernel_size, stride=ly.stride,
                    padding=ly.padding, factor=ly.factor,
                )
                for ly in self.layers
            ],
            self.input_shape,
            self.role,
        )


@dataclass(frozen=True, order=True)
class NeuronSite:
    """Address of one neuron: layer ``l`` (1-based), channel/unit, spatial index.

    ``spatial`` is empty for flat (dense) activations and ``(row, col)`` for
    featuremaps.
    """

    layer: int
    unit: int
    spatial: tuple = field(default=())

    @property
    def index(self) -> tuple:
        return (self.unit,) + tuple(self.spatial)


def dense_layer(weight, bias=None, activation: Activation = IDENTITY, out_shape=None) -> Layer:
    weight = np.asarray(weight, dtype=np.float64)
    return Layer("dense", (weight.shape[1],), weight, bias, activation, out_shape)


def mlp(widths: Sequence[int], activation: Activation, output_activation: Activation = IDENTITY,
        rng: np.random.Generator | None = None, role: str = "generator",
        gain: float = 1.0) -> NetworkSpec:
    """Random dense stack ``widths[0] -> ... -> widths[-1]`` with He-style init."""
    rng = np.random.default_rng(0) if rng is None else rng
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        act = output_activation if i == len(widths) - 2 else activation
        w = rng.normal(0.0, gain * np.sqrt(2.0 / n_in), size=(n_out, n_in))
        b = rng.normal(0.0, 0.1, size=n_out)
        layers.append(dense_layer(w, b, act))
    return NetworkSpec(layers, (widths[0],), role)


def _as_batch(net: NetworkSpec, l: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    expected = net.shape_of(l)
    if x.shape == expected or (x.ndim == 1 and x.size == int(np.prod(expected))):
        return x.reshape((1,) + expected)
    if x.shape[1:] == expected:
        return x
    where = "input" if l == 0 else f"layer {l} ({net.layers[l - 1].kind}) output"
    raise ShapeError(f"tensor of shape {x.shape} does not match {where} shape {expected}")


def forward_batch(net: NetworkSpec, z, start: int = 0, stop: int | None = None,
                  keep_pre: bool = False):
    """Run layers ``start+1 .. stop`` on a batch; returns all activations.

    With ``keep_pre`` the pre-activations are returned too, aligned so that
    ``pre[l]`` belongs to ``h[l]`` (``pre[start]`` is None).
    """
    stop = net.depth if stop is None else stop
    h = _as_batch(net, start, z)
    acts = [h]
    pres = [None]
    for layer in net.layers[start:stop]:
        pre = layer.linear(h)
        h = layer.activation(pre)
        acts.append(h)
        pres.append(pre)
    if keep_pre:
        return acts, pres
    return acts


def forward(net: NetworkSpec, z) -> list:
    """Activations ``[h_0, h_1, ..., h_L]`` for a single latent code ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.size != net.latent_dim:
        raise ShapeError(f"latent code has {z.size} entries, network expects {net.latent_dim}")
    return [a[0] for a in forward_batch(net, z.reshape(net.input_shape))]


def forward_from(net: NetworkSpec, l: int, h_l) -> np.ndarray:
    """Resume the forward pass at layer ``l + 1`` from ``h_l``; returns the output."""
    if not 0 <= l <= net.depth:
        raise ShapeError(f"layer index {l} outside 0..{net.depth}")
    h_l = np.asarray(h_l, dtype=np.float64)
    single = h_l.shape == net.shape_of(l) or h_l.ndim == 1
    out = forward_batch(net, h_l, start=l)[-1]
    return out[0] if single else out


def check_site(net: NetworkSpec, site: NeuronSite) -> None:
    if not 1 <= site.layer <= net.depth:
        raise ShapeError(f"site layer {site.layer} outside 1..{net.depth}")
    shape = net.shape_of(site.layer)
    idx = site.index
    if len(idx) != len(shape) or any(not 0 <= i < n for i, n in zip(idx, shape)):
        raise ShapeError(f"site {idx} invalid for layer {site.layer} of shape {shape}")


def neuron_value(net: NetworkSpec, z, site: NeuronSite) -> float:
    check_site(net, site)
    h = forward_batch(net, np.asarray(z, dtype=np.float64).reshape(net.input_shape),
                      stop=site.layer)[-1]
    return float(h[(0,) + site.index])


def iter_sites(net: NetworkSpec, l: int):
    """All neuron sites of layer ``l`` in row-major order."""
    shape = net.shape_of(l)
    for idx in np.ndindex(*shape):
        yield NeuronSite(l, int(idx[0]), tuple(int(i) for i in idx[1:]))


# -- backpropagation ---------------------------------------------------------

def backward(net: NetworkSpec, acts, pres, grad_out, start: int = 0):
    """Gradients of a scalar objective through layers ``start+1 .. L``.

    ``acts``/``pres`` come from ``forward_batch(..., keep_pre=True)`` and
    ``grad_out`` is dObjective/dOutput with the batch axis first. Returns
    ``(param_grads, grad_input)`` where ``param_grads[i]`` is ``(dW, db)`` for
    layer ``i + 1`` or None for parameter-free layers (and for layers at or
    below ``start``).
    """
    grads = [None] * net.depth
    g = np.asarray(grad_out, dtype=np.float64)
    for idx in range(net.depth, start, -1):
        layer = net.layers[idx - 1]
        x = acts[idx - start - 1]
        pre = pres[idx - start]
        g = g * layer.activation.derivative(pre)
        if layer.kind == "dense":
            gflat = g.reshape(g.shape[0], -1)
            xflat = x.reshape(x.shape[0], -1)
            grads[idx - 1] = (gflat.T @ xflat, gflat.sum(axis=0))
            g = (gflat @ layer.weight).reshape(x.shape)
        elif layer.kind == "conv2d":
            dw, db, g = _conv2d_backward(x, layer, g)
            grads[idx - 1] = (dw, db)
        else:
            f = layer.factor
            b, c, h, w = x.shape
            g = g.reshape(b, c, h, f, w, f).sum(axis=(3, 5))
    return grads, g


def _conv2d_backward(x, layer: Layer, g):
    s, p, k = layer.stride, layer.padding, layer.kernel_size
    _, rows, cols = layer.out_shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    gx = np.zeros_like(xp)
    dw = np.zeros_like(layer.weight)
    for ki in range(k):
        for kj in range(k):
            sl = (slice(None), slice(None),
                  slice(ki, ki + s * (rows - 1) + 1, s),
                  slice(kj, kj + s * (cols - 1) + 1, s))
            dw[:, :, ki, kj] = np.einsum("bohw,bihw->oi", g, xp[sl])
            gx[sl] += np.einsum("bohw,oi->bihw", g, layer.weight[:, :, ki, kj])
    if p:
        gx = gx[:, :, p:-p, p:-p]
    return dw, g.sum(axis=(0, 2, 3)), gx


# -- model container ---------------------------------------------------------

def save_model(net: NetworkSpec) -> bytes:
    """Serialize to the ``CLAPROBE`` container (little-endian float64 payload)."""
    layers = []
    payload = []
    offset = 0
    for idx, layer in enumerate(net.layers):
        entry = {
            "kind": layer.kind,
            "in_shape": list(layer.in_shape),
            "out_shape": list(layer.out_shape),
            "activation": layer.activation.kind,
            "slope": layer.activation.slope,
            "tensors": [],
        }
        if layer.kind == "conv2d":
            entry.update(kernel_size=layer.kernel_size, stride=layer.stride, padding=layer.padding)
        if layer.kind == "upsample_nearest":
            entry["factor"] = layer.factor
        if layer.has_params:
            for name, arr in (("weight", layer.weight), ("bias", layer.bias)):
                raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                entry["tensors"].append({
                    "name": f"layer{idx + 1}.{name}",
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                })
                payload.append(raw)
                offset += len(raw)
        layers.append(entry)
    manifest = {"role": net.role, "input_shape": list(net.input_shape), "layers": layers}
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<I", FORMAT_VERSION),
                     struct.pack("<I", len(header)), header] + payload)


def load_model(blob: bytes) -> NetworkSpec:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ModelFormatError("bad magic: not a CLAPROBE model container")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported container version {version}, expected {FORMAT_VERSION}")
    (hlen,) = struct.unpack("<I", blob[12:16])
    if 16 + hlen > len(blob):
        raise ModelFormatError("truncated manifest")
    try:
        manifest = json.loads(blob[16:16 + hlen].decode("utf-8"))
        base = 16 + hlen
        layers = []
        for entry in manifest["layers"]:
            tensors = {}
            for t in entry["tensors"]:
                lo = base + t["offset"]
                hi = lo + t["nbytes"]
                if hi > len(blob):
                    raise ModelFormatError(
                        f"payload truncated inside tensor {t['name']} "
                        f"(need {hi} bytes, have {len(blob)})"
                    )
                arr = np.frombuffer(blob[lo:hi], dtype="<f8").astype(np.float64)
                tensors[t["name"].split(".")[-1]] = arr.reshape(t["shape"])
            slope = float(entry["slope"])
            act = Activation(entry["activation"], slope)
            layers.append(Layer(
                kind=entry["kind"], in_shape=tuple(entry["in_shape"]),
                weight=tensors.get("weight"), bias=tensors.get("bias"), activation=act,
                out_shape=tuple(entry["out_shape"]) if entry["kind"] == "dense" else None,
                kernel_size=entry.get("kernel_size", 0), stride=entry.get("stride", 1),
                padding=entry.get("padding", 0), factor=entry.get("factor", 1),
            ))
        return NetworkSpec(layers, tuple(manifest["input_shape"]), manifest["role"])
    except (KeyError, TypeError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"malformed manifest: {exc}") from exc


def save_model_file(net: NetworkSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(net))


def load_model_file(path) -> NetworkSpec:
    with open(path, "rb") as fh:
        return load_model(fh.read())

"""The neural vector field f_theta and its parameter file format.

A network is an ordered list of :class:`LayerSpec`. Parameters live in one
flat float64 vector; each linear layer owns an ``in*out`` weight block
(row-major, so the layer computes ``x @ W + b``) followed by ``out`` biases.

The field is autonomous: the time argument is accepted and ignored.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._kernels import ACT_ELU, ACT_NONE, ACT_TANH
from .errors import ContractError, ParseError, ShapeError, SpecMismatchError

MAGIC = b"CODL"
FORMAT_VERSION = 1

_ACTIVATIONS = ("tanh", "elu")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0

    @classmethod
    def linear(cls, in_dim: int, out_dim: int) -> "LayerSpec":
        return cls("linear", int(in_dim), int(out_dim))

    @classmethod
    def tanh(cls) -> "LayerSpec":
        return cls("tanh")

    @classmethod
    def elu(cls) -> "LayerSpec":
        return cls("elu")

    def __str__(self):
        if self.kind == "linear":
            return f"linear({self.in_dim},{self.out_dim})"
        return self.kind


def validate_spec(spec, state_dim: int | None = None) -> int:
    """Check the layer list and return the state dimension it implies."""
    linears = [layer for layer in spec if layer.kind == "linear"]
    if not linears:
        raise ContractError("network needs at least one linear layer")
    for layer in spec:
        if layer.kind not in ("linear",) + _ACTIVATIONS:
            raise ContractError(f"unknown layer kind {layer.kind!r}")
        if layer.kind == "linear" and (layer.in_dim < 1 or layer.out_dim < 1):
            raise ContractError(f"bad linear layer {layer}")
    for a, b in zip(linears, linears[1:]):
        if a.out_dim != b.in_dim:
            raise ShapeError(f"consecutive linear layers incompatible: {a} then {b}")
    d = linears[0].in_dim
    if linears[-1].out_dim != d:
        raise ShapeError(f"last linear out-dim {linears[-1].out_dim} != state dim {d}")
    if state_dim is not None and d != state_dim:
        raise ShapeError(f"network state dim {d} != expected {state_dim}")
    return d


def spec_hash(spec) -> bytes:
    text = ";".join(str(layer) for layer in spec).encode()
    return hashlib.sha256(text).digest()


class DynamicsNet:
    """MLP right-hand side with a flat parameter vector ``theta``."""

    def __init__(self, spec, theta=None, seed: int | None = 0):
        self.spec = tuple(spec)
        self.state_dim = validate_spec(self.spec)
        self.seed = seed
        sizes = [(layer.in_dim, layer.out_dim) for layer in self.spec if layer.kind == "linear"]
        self.n_params = sum(i * o + o for i, o in sizes)
        if theta is None:
            theta = self._init_params(seed)
        theta = np.array(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.n_params:
            raise ShapeError(f"theta has {theta.size} entries, network needs {self.n_params}")
        self.theta = theta
        self._layout = None

    def _init_params(self, seed) -> np.ndarray:
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike
        rng = np.random.default_rng(seed)
        chunks = []
        for layer in self.spec:
            if layer.kind != "linear":
                continue
            bound = 1.0 / np.sqrt(layer.in_dim)
            chunks.append(rng.uniform(-bound, bound, layer.in_dim * layer.out_dim))
            chunks.append(rng.uniform(-bound, bound, layer.out_dim))
        return np.concatenate(chunks)

    def __repr__(self):
        layers = ", ".join(str(layer) for layer in self.spec)
        return f"DynamicsNet([{layers}], n_params={self.n_params})"

    def with_params(self, theta) -> "DynamicsNet":
        return DynamicsNet(self.spec, theta=theta, seed=self.seed)

    def copy(self) -> "DynamicsNet":
        return self.with_params(self.theta.copy())

    # evaluation -----------------------------------------------------------
    def forward(self, t, y, params=None) -> ad.Tensor:
        """Evaluate f(y) on the tape. ``params`` defaults to a constant theta."""
        return self.bind(params)(t, y)

    def __call__(self, t, y) -> np.ndarray:
        return self.forward(t, ad.Tensor(np.asarray(y, dtype=np.float64))).data

    def bind(self, params=None) -> "BoundDynamics":
        """Attach a parameter tensor, usually a tape leaf, for repeated evaluation."""
        if params is None:
            params = ad.Tensor(self.theta)
        params = ad.as_tensor(params)
        if params.shape != (self.n_params,):
            raise ShapeError(f"params shape {params.shape} != ({self.n_params},)")
        return BoundDynamics(self, params)

    def fused_layout(self):
        """Layer arrays for the compiled kernels, or None if the layout is unsupported.

        Supported layouts are linear layers each followed by at most one activation.
        """
        if self._layout is not None:
            return self._layout or None
        w_off, b_off, din, dout, acts = [], [], [], [], []
        pos = 0
        ok = True
        for layer in self.spec:
            if layer.kind == "linear":
                w_off.append(pos)
                pos += layer.in_dim * layer.out_dim
                b_off.append(pos)
                pos += layer.out_dim
                din.append(layer.in_dim)
                dout.append(layer.out_dim)
                acts.append(ACT_NONE)
            else:
                if not acts or acts[-1] != ACT_NONE:
                    ok = False
                    break
                acts[-1] = ACT_TANH if layer.kind == "tanh" else ACT_ELU
        if not ok:
            self._layout = ()
            return None
        arr = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
        self._layout = (arr(w_off), arr(b_off), arr(din), arr(dout), arr(acts))
        return self._layout


class BoundDynamics:
    """A network together with the parameter tensor it is evaluated at."""

    def __init__(self, net: DynamicsNet, params: ad.Tensor):
        self.net = net
        self.params = params
        self._layers = None

    @property
    def state_dim(self):
        return self.net.state_dim

    def _unpack(self):
        if self._layers is None:
            layers = []
            pos = 0
            for layer in self.net.spec:
                if layer.kind == "linear":
                    nw = layer.in_dim * layer.out_dim
                    W = self.params[pos : pos + nw].reshape(layer.in_dim, layer.out_dim)
                    pos += nw
                    b = self.params[pos : pos + layer.out_dim]
                    pos += layer.out_dim
                    layers.append(("linear", W, b))
                else:
                    layers.append((layer.kind, None, None))
            self._layers = layers
        return self._layers

    def __call__(self, t, y) -> ad.Tensor:
        y = ad.as_tensor(y)
        if y.shape[-1] != self.net.state_dim:
            raise ShapeError(f"state has dim {y.shape[-1]}, network expects {self.net.state_dim}")
        h = y
        for kind, W, b in self._unpack():
            if kind == "linear":
                h = ad.matmul(h, W) + b
            elif kind == "tanh":
                h = ad.tanh(h)
            else:
                h = ad.elu(h)
        return h


def build_wpg_net(seed: int = 0) -> DynamicsNet:
    """1 -> linear(50) -> tanh -> linear(50) -> ELU -> linear(1)."""
    L = LayerSpec
    spec = [L.linear(1, 50), L.tanh(), L.linear(50, 50), L.elu(), L.linear(50, 1)]
    return DynamicsNet(spec, seed=seed)


def build_cr_net(seed: int = 0) -> DynamicsNet:
    """4 -> lin(50) -> tanh -> lin(64) -> ELU -> lin(50) -> tanh -> lin(4)."""
    L = LayerSpec
    spec = [
        L.linear(4, 50),
        L.tanh(),
        L.linear(50, 64),
        L.elu(),
        L.linear(64, 50),
        L.tanh(),
        L.linear(50, 4),
    ]
    return DynamicsNet(spec, seed=seed)


# parameter files --------------------------------------------------------------
#
# magic "CODL" | u8 version | 32-byte sha256 of the layer spec | u32 spec length
# | spec text (utf-8) | i64 seed (-1 if none) | u64 n_params | n_params f64 LE


def save_params(net: DynamicsNet, path) -> None:
    spec_text = ";".join(str(layer) for layer in net.spec).encode()
    seed = -1 if net.seed is None else int(net.seed)
    blob = b"".join(
        [
            MAGIC,
            struct.pack("<B", FORMAT_VERSION),
            spec_hash(net.spec),
            struct.pack("<I", len(spec_text)),
            spec_text,
            struct.pack("<qQ", seed, net.n_params),
            net.theta.astype("<f8").tobytes(),
        ]
    )
    Path(path).write_bytes(blob)


def _parse_spec_text(text: str, offset: int):
    spec = []
    for item in text.split(";"):
        if item in _ACTIVATIONS:
            spec.append(LayerSpec(item))
        elif item.startswith("linear(") and item.endswith(")"):
            try:
                a, b = item[7:-1].split(",")
                spec.append(LayerSpec.linear(int(a), int(b)))
            except ValueError:
                raise ParseError(f"bad layer entry {item!r}", offset) from None
        else:
            raise ParseError(f"bad layer entry {item!r}", offset)
    return spec


def load_params(path, expected_spec=None) -> DynamicsNet:
    """Read a parameter file; ``expected_spec`` guards against loading the wrong net."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(f"file truncated at byte {len(data)}, needed {pos + n}", len(data))
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ParseError("bad magic bytes", 0)
    (version,) = struct.unpack("<B", take(1))
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    digest = take(32)
    (n_text,) = struct.unpack("<I", take(4))
    text_at = pos
    try:
        text = take(n_text).decode()
    except UnicodeDecodeError:
        raise ParseError("spec text is not utf-8", text_at) from None
    spec = _parse_spec_text(text, text_at)
    if spec_hash(spec) != digest:
        raise SpecMismatchError("stored spec hash does not match the stored spec")
    if expected_spec is not None and spec_hash(expected_spec) != digest:
        raise SpecMismatchError("parameter file was written for a different network")
    seed, n_params = struct.unpack("<qQ", take(16))
    raw_at = pos
    raw = take(8 * n_params)
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes", pos)
    theta = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    try:
        return DynamicsNet(spec, theta=theta, seed=None if seed < 0 else seed)
    except (ShapeError, ContractError) as exc:
        raise ParseError(str(exc), raw_at) from None

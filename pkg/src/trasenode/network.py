"""Feedforward vector-field network and its exact derivatives.

The network approximates the right-hand side of a controlled ODE,
``dx/dt = f(x, t, u, y)``, as a fully connected net over the concatenated
input ``[x; u; y]`` (time is appended last only when ``time_as_input`` is
set; both stock experiments use time-invariant fields).

Parameters live in a single flat float64 vector with a fixed layout:
for each layer in order (hidden layers first, output layer last), the
weight matrix in row-major order followed by the bias vector.  The layout
is a pure function of :class:`NetSpec`, so checkpoints are portable.

All derivatives are exact.  First-order quantities come from closed-form
forward/reverse sweeps.  Second-order quantities differentiate the
sensitivity right-hand side itself by carrying a directional tangent
through both sweeps (reverse-over-forward), so no third-order tensor is
ever materialized.  Finite differences appear only in the test suite, as
an independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, DimensionMismatchError

ACTIVATIONS = ("leaky_relu", "tanh")

DEFAULT_LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class LayerSpec:
    """One hidden layer: width and activation."""

    width: int
    activation: str = "leaky_relu"
    slope: float = DEFAULT_LEAKY_SLOPE  # negative-side slope, leaky_relu only

    def __post_init__(self):
        if self.width < 1:
            raise DimensionMismatchError("hidden width", ">= 1", self.width)
        if self.activation not in ACTIVATIONS:
            raise DataError(
                f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}"
            )


@dataclass(frozen=True)
class NetSpec:
    """Architecture of the vector-field network.

    ``input_dim`` counts state + set-point + exogenous channels (plus one
    more when ``time_as_input``); ``output_dim`` equals the state
    dimension of the system being modeled.
    """

    input_dim: int
    hidden: tuple[LayerSpec, ...]
    output_dim: int
    time_as_input: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.output_dim < 1:
            raise DimensionMismatchError("output_dim", ">= 1", self.output_dim)
        if not self.hidden:
            raise DataError("at least one hidden layer is required")
        floor = self.output_dim + 1 + (1 if self.time_as_input else 0)
        if self.input_dim < floor:
            raise DimensionMismatchError("input_dim", f">= {floor}", self.input_dim)

    @property
    def state_dim(self) -> int:
        return self.output_dim

    @property
    def exo_dim(self) -> int:
        return self.input_dim - self.output_dim - 1 - (1 if self.time_as_input else 0)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": [
                {"width": h.width, "activation": h.activation, "slope": h.slope}
                for h in self.hidden
            ],
            "output_dim": self.output_dim,
            "time_as_input": self.time_as_input,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetSpec":
        return NetSpec(
            input_dim=int(d["input_dim"]),
            hidden=tuple(
                LayerSpec(
                    int(h["width"]),
                    str(h["activation"]),
                    float(h.get("slope", DEFAULT_LEAKY_SLOPE)),
                )
                for h in d["hidden"]
            ),
            output_dim=int(d["output_dim"]),
            time_as_input=bool(d.get("time_as_input", False)),
        )


def _layer_dims(spec: NetSpec) -> list[tuple[int, int]]:
    dims = [spec.input_dim] + [h.width for h in spec.hidden] + [spec.output_dim]
    return list(zip(dims[1:], dims[:-1]))  # (fan_out, fan_in) per layer


def param_count(spec: NetSpec) -> int:
    """Length of the flat parameter vector for this architecture."""
    return sum(fo * fi + fo for fo, fi in _layer_dims(spec))


@dataclass(frozen=True, eq=False)
class ParamVector:
    """All weights and biases as one flat vector; the single trainable object."""

    spec: NetSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        p = param_count(self.spec)
        if vals.ndim != 1 or vals.shape[0] != p:
            raise DimensionMismatchError("theta", (p,), vals.shape)
        if not np.all(np.isfinite(vals)):
            raise DataError("parameter vector contains non-finite entries")
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.spec, values)

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ModelInput:
    """One evaluation point of the vector field."""

    x: np.ndarray
    t: float = 0.0
    u: float = 0.0
    y: np.ndarray = field(default_factory=lambda: np.empty(0))


def init_params(spec: NetSpec, seed: int) -> ParamVector:
    """Deterministically initialize parameters.

    Weights are uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; biases
    start at zero.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_out, fan_in in _layer_dims(spec):
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return ParamVector(spec, np.concatenate(chunks))


def pack_params(spec: NetSpec, layers) -> ParamVector:
    """Assemble a ParamVector from per-layer ``(W, b)`` pairs."""
    dims = _layer_dims(spec)
    if len(layers) != len(dims):
        raise DimensionMismatchError("layers", len(dims), len(layers))
    chunks = []
    for (W, b), (fan_out, fan_in) in zip(layers, dims):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.shape != (fan_out, fan_in):
            raise DimensionMismatchError("W", (fan_out, fan_in), W.shape)
        if b.shape != (fan_out,):
            raise DimensionMismatchError("b", (fan_out,), b.shape)
        chunks.append(W.ravel())
        chunks.append(b)
    return ParamVector(spec, np.concatenate(chunks))


def unpack_params(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(W, b)`` views into the flat vector (no copies)."""
    out = []
    off = 0
    for fan_out, fan_in in _layer_dims(params.spec):
        W = params.values[off : off + fan_out * fan_in].reshape(fan_out, fan_in)
        off += fan_out * fan_in
        b = params.values[off : off + fan_out]
        off += fan_out
        out.append((W, b))
    return out


class _Compiled:
    """Unpacked parameter views plus layout metadata for the sweep kernels."""

    __slots__ = ("spec", "n", "d", "p", "hidden", "Wo", "bo", "slices")

    def __init__(self, params: ParamVector):
        spec = params.spec
        self.spec = spec
        self.n = spec.output_dim
        self.d = spec.input_dim
        self.p = params.size
        layers = unpack_params(params)
        acts = [(h.activation, h.slope) for h in spec.hidden]
        self.hidden = [
            (W, b, kind, slope) for (W, b), (kind, slope) in zip(layers[:-1], acts)
        ]
        self.Wo, self.bo = layers[-1]
        self.slices = []
        off = 0
        for fan_out, fan_in in _layer_dims(spec):
            wsl = slice(off, off + fan_out * fan_in)
            off += fan_out * fan_in
            bsl = slice(off, off + fan_out)
            off += fan_out
            self.slices.append((wsl, bsl))


def _compile(params: ParamVector) -> _Compiled:
    return _Compiled(params)


def _compose_input(spec: NetSpec, x, u, y=None, t: float = 0.0) -> np.ndarray:
    n = spec.output_dim
    m = spec.exo_dim
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise DimensionMismatchError("x", (n,), x.shape)
    vec = np.empty(spec.input_dim)
    vec[:n] = x
    vec[n] = u
    if m:
        y = np.asarray(y if y is not None else (), dtype=np.float64)
        if y.shape != (m,):
            raise DimensionMismatchError("y", (m,), y.shape)
        vec[n + 1 : n + 1 + m] = y
    elif y is not None and np.asarray(y).size:
        raise DimensionMismatchError("y", (0,), np.asarray(y).shape)
    if spec.time_as_input:
        vec[-1] = t
    return vec


def _sens_direction(spec: NetSpec, s) -> np.ndarray:
    """Input-space direction [s; 1; 0...] that turns a JVP into the
    sensitivity right-hand side."""
    n = spec.output_dim
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (n,):
        raise DimensionMismatchError("s", (n,), s.shape)
    dirv = np.zeros(spec.input_dim)
    dirv[:n] = s
    dirv[n] = 1.0
    return dirv


# ---------------------------------------------------------------------------
# Sweep kernels.  ``dirv`` is an input-space tangent; quantities suffixed
# ``dot`` are derivatives along that direction.
# ---------------------------------------------------------------------------


def _sweep_forward(net: _Compiled, vec: np.ndarray, dirv=None):
    """Forward pass, optionally carrying one input-space tangent.

    Returns ``(f, fdot, cache, aH, aHdot)`` where cache holds, per hidden
    layer, ``(a_in, adot_in, p, q)`` with ``p = sigma'(z)`` and
    ``q = sigma''(z) * zdot`` (q is None without a tangent).
    """
    a = vec
    adot = dirv
    cache = []
    for W, b, kind, slope in net.hidden:
        z = W @ a + b
        if kind == "tanh":
            a_new = np.tanh(z)
            p = 1.0 - a_new * a_new
            if adot is not None:
                zdot = W @ adot
                q = -2.0 * a_new * p * zdot
        else:
            pos = z > 0.0
            a_new = np.where(pos, z, slope * z)
            p = np.where(pos, 1.0, slope)
            if adot is not None:
                zdot = W @ adot
                q = np.zeros_like(z)
        if adot is None:
            cache.append((a, None, p, None))
            adot_new = None
        else:
            cache.append((a, adot, p, q))
            adot_new = p * zdot
        a = a_new
        adot = adot_new
    f = net.Wo @ a + net.bo
    fdot = net.Wo @ adot if adot is not None else None
    return f, fdot, cache, a, adot


def _sweep_reverse(net: _Compiled, cache, aH, aHdot, seeds: np.ndarray, dual: bool):
    """Backpropagate seed covectors through a cached forward sweep.

    ``seeds`` has shape (k, n).  Returns ``(g_inp, g_theta)`` of shapes
    (k, d) and (k, p) without duals, plus ``(gdot_inp, gdot_theta)`` when
    ``dual`` and the forward sweep carried a tangent.
    """
    k = seeds.shape[0]
    g_theta = np.empty((k, net.p))
    gdot_theta = np.empty((k, net.p)) if dual else None
    wsl, bsl = net.slices[-1]
    g_theta[:, wsl] = np.einsum("ko,i->koi", seeds, aH).reshape(k, -1)
    g_theta[:, bsl] = seeds
    if dual:
        gdot_theta[:, wsl] = np.einsum("ko,i->koi", seeds, aHdot).reshape(k, -1)
        gdot_theta[:, bsl] = 0.0
    D = seeds @ net.Wo
    Ddot = None  # seed covectors are constants
    delta = deltadot = None
    for idx in range(len(net.hidden) - 1, -1, -1):
        W, b, kind, slope = net.hidden[idx]
        a_in, adot_in, p, q = cache[idx]
        delta = D * p
        if dual:
            deltadot = D * q if Ddot is None else Ddot * p + D * q
        wsl, bsl = net.slices[idx]
        g_theta[:, wsl] = np.einsum("ko,i->koi", delta, a_in).reshape(k, -1)
        g_theta[:, bsl] = delta
        if dual:
            gd = np.einsum("ko,i->koi", deltadot, a_in)
            gd += np.einsum("ko,i->koi", delta, adot_in)
            gdot_theta[:, wsl] = gd.reshape(k, -1)
            gdot_theta[:, bsl] = deltadot
        if idx > 0:
            D = delta @ W
            if dual:
                Ddot = deltadot @ W
    W0 = net.hidden[0][0]
    g_inp = delta @ W0
    if not dual:
        return g_inp, g_theta, None, None
    gdot_inp = deltadot @ W0
    return g_inp, g_theta, gdot_inp, gdot_theta


def _hyper_forward(net: _Compiled, vec: np.ndarray, dir1: np.ndarray, dir2: np.ndarray):
    """Forward pass carrying two input tangents and their cross term.

    Returns ``(f, f1, f2, f12)`` where ``f1``/``f2`` are directional
    derivatives along ``dir1``/``dir2`` and ``f12`` is the mixed second
    directional derivative.
    """
    a, a1, a2 = vec, dir1, dir2
    a12 = np.zeros_like(vec)
    for W, b, kind, slope in net.hidden:
        z = W @ a + b
        z1, z2, z12 = W @ a1, W @ a2, W @ a12
        if kind == "tanh":
            a = np.tanh(z)
            p = 1.0 - a * a
            dd = -2.0 * a * p
        else:
            pos = z > 0.0
            a = np.where(pos, z, slope * z)
            p = np.where(pos, 1.0, slope)
            dd = 0.0
        a12 = p * z12 + dd * z1 * z2
        a1 = p * z1
        a2 = p * z2
    return net.Wo @ a + net.bo, net.Wo @ a1, net.Wo @ a2, net.Wo @ a12


def _input_jacobian(net: _Compiled, vec: np.ndarray) -> np.ndarray:
    """Exact Jacobian of the net output w.r.t. its concatenated input."""
    a = vec
    J = np.eye(net.d)
    for W, b, kind, slope in net.hidden:
        z = W @ a + b
        if kind == "tanh":
            a = np.tanh(z)
            p = 1.0 - a * a
        else:
            pos = z > 0.0
            a = np.where(pos, z, slope * z)
            p = np.where(pos, 1.0, slope)
        J = (W @ J) * p[:, None]
    return net.Wo @ J


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------


def _as_vec(params: ParamVector, inp: ModelInput) -> np.ndarray:
    return _compose_input(params.spec, inp.x, inp.u, inp.y, inp.t)


def eval_f(params: ParamVector, inp: ModelInput) -> np.ndarray:
    """Evaluate the learned vector field at one point."""
    net = _compile(params)
    f, _, _, _, _ = _sweep_forward(net, _as_vec(params, inp))
    return f


def jac_x(params: ParamVector, inp: ModelInput) -> np.ndarray:
    """d f / d x, shape (n, n)."""
    net = _compile(params)
    return _input_jacobian(net, _as_vec(params, inp))[:, : net.n]


def jac_u(params: ParamVector, inp: ModelInput) -> np.ndarray:
    """d f / d u, shape (n,)."""
    net = _compile(params)
    return _input_jacobian(net, _as_vec(params, inp))[:, net.n]


def jac_theta(params: ParamVector, inp: ModelInput) -> np.ndarray:
    """d f / d theta, shape (n, p)."""
    net = _compile(params)
    _, _, cache, aH, _ = _sweep_forward(net, _as_vec(params, inp))
    _, g_theta, _, _ = _sweep_reverse(net, cache, aH, None, np.eye(net.n), dual=False)
    return g_theta


def sens_rhs(params: ParamVector, inp: ModelInput, s: np.ndarray) -> np.ndarray:
    """Time derivative of the set-point sensitivity:
    ``df/du + (df/dx) @ s``, computed as one exact directional derivative.
    """
    net = _compile(params)
    dirv = _sens_direction(params.spec, s)
    _, fdot, _, _, _ = _sweep_forward(net, _as_vec(params, inp), dirv)
    return fdot


class SensRhsJacobians(NamedTuple):
    """Derivatives of :func:`sens_rhs` w.r.t. x, s, and theta (s held fixed
    for d_x and d_theta; d_s equals ``jac_x`` by linearity)."""

    d_x: np.ndarray  # (n, n)
    d_s: np.ndarray  # (n, n)
    d_theta: np.ndarray  # (n, p)


def sens_rhs_jacobians(
    params: ParamVector, inp: ModelInput, s: np.ndarray
) -> SensRhsJacobians:
    """Second-order blocks consumed by the augmented adjoint equations.

    Obtained by differentiating :func:`sens_rhs` itself: the forward sweep
    carries the sensitivity tangent, the reverse sweep propagates both the
    value and the tangent of every gradient, so the returned matrices are
    exact mixed second derivatives of the underlying network.
    """
    net = _compile(params)
    vec = _as_vec(params, inp)
    dirv = _sens_direction(params.spec, s)
    _, _, cache, aH, aHdot = _sweep_forward(net, vec, dirv)
    _, _, gdot_inp, gdot_theta = _sweep_reverse(
        net, cache, aH, aHdot, np.eye(net.n), dual=True
    )
    d_s = _input_jacobian(net, vec)[:, : net.n]  # same code path as jac_x
    return SensRhsJacobians(d_x=gdot_inp[:, : net.n], d_s=d_s, d_theta=gdot_theta)


# ---------------------------------------------------------------------------
# Fused products for the adjoint passes.  These return only what the
# backward integrations contract against, in one forward and one reverse
# sweep, so the hot loop never materializes (n, p) matrices.
# ---------------------------------------------------------------------------


class _NodeProducts(NamedTuple):
    f: np.ndarray
    jxT_ax: np.ndarray  # (df/dx)^T a_x
    quad: np.ndarray  # (df/dtheta)^T a_x


def _node_products(net: _Compiled, vec: np.ndarray, a_x: np.ndarray) -> _NodeProducts:
    f, _, cache, aH, _ = _sweep_forward(net, vec)
    g_inp, g_theta, _, _ = _sweep_reverse(
        net, cache, aH, None, a_x.reshape(1, -1), dual=False
    )
    return _NodeProducts(f=f, jxT_ax=g_inp[0, : net.n], quad=g_theta[0])


class _AugProducts(NamedTuple):
    f: np.ndarray
    srhs: np.ndarray
    jxT_ax: np.ndarray
    jxT_as: np.ndarray
    dxT_as: np.ndarray  # (d sens_rhs/d x)^T a_s
    quad: np.ndarray  # (df/dtheta)^T a_x + (d sens_rhs/d theta)^T a_s


def _aug_products(
    net: _Compiled,
    vec: np.ndarray,
    dirv: np.ndarray,
    a_x: np.ndarray,
    a_s: np.ndarray,
) -> _AugProducts:
    f, fdot, cache, aH, aHdot = _sweep_forward(net, vec, dirv)
    seeds = np.stack([a_x, a_s])
    g_inp, g_theta, gdot_inp, gdot_theta = _sweep_reverse(
        net, cache, aH, aHdot, seeds, dual=True
    )
    return _AugProducts(
        f=f,
        srhs=fdot,
        jxT_ax=g_inp[0, : net.n],
        jxT_as=g_inp[1, : net.n],
        dxT_as=gdot_inp[1, : net.n],
        quad=g_theta[0] + gdot_theta[1],
    )


# ---------------------------------------------------------------------------
# Checkpoint I/O.  JSON document {"spec": ..., "param_values": [...]} with
# parameter values printed at 17 significant digits (lossless round-trip).
# ---------------------------------------------------------------------------


def _format_value(v: float) -> str:
    return format(float(v), ".17g")


def checkpoint_document(params: ParamVector) -> str:
    spec_json = json.dumps(params.spec.to_dict(), indent=2)
    vals = ",\n    ".join(_format_value(v) for v in params.values)
    return (
        "{\n"
        f'  "spec": {spec_json},\n'
        f'  "param_values": [\n    {vals}\n  ]\n'
        "}\n"
    )


def save_checkpoint(params: ParamVector, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_document(params))


def load_checkpoint(path) -> ParamVector:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        spec = NetSpec.from_dict(doc["spec"])
        values = np.asarray(doc["param_values"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}") from exc
    return ParamVector(spec, values)

"""A small reverse-mode differentiation kit for dense networks.

Just enough machinery for the decoders in this package: fully connected
layers with a pointwise nonlinearity, a numerically stable log-softmax, a
diagonal Gaussian log-likelihood, categorical entropy and the ADAM update.

A forward pass records onto a one-shot tape.  The backward pass returns
gradients for the flat parameter vector *and* for the network input, so
graphs that feed one network's output into another (e.g. a relaxed mixture
of constellation points into the generative net) can be chained by hand.

Everything is float64; the networks are tiny, so the cost is negligible and
finite-difference checks at 1e-5 relative tolerance stay meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

LOG_TWO_PI = float(np.log(2.0 * np.pi))

# log-variances are clamped to this range inside the Gaussian log-likelihood
# graph; the clamp has zero slope where active.
LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

ACTIVATIONS = ("relu", "tanh")
INIT_SCHEMES = ("uniform_fan_avg", "uniform_fan_in")


def param_count(layer_sizes) -> int:
    """Total parameter count: sum of (n_in + 1) * n_out over layers."""
    sizes = tuple(layer_sizes)
    return sum((nin + 1) * nout for nin, nout in zip(sizes[:-1], sizes[1:]))


def _layer_views(params: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    views = []
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        w = params[off : off + nin * nout].reshape(nin, nout)
        off += nin * nout
        b = params[off : off + nout]
        off += nout
        views.append((w, b))
    return views


@dataclass(frozen=True)
class Mlp:
    """A fully connected network stored as one flat float64 parameter vector.

    Hidden layers apply ``activation``; the output layer is affine.
    """

    layer_sizes: tuple
    params: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (param_count(sizes),):
            raise ValueError(
                f"params must be a flat vector of length {param_count(sizes)}, got {params.shape}"
            )
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_layers", _layer_views(params, sizes))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def with_params(self, params: np.ndarray) -> "Mlp":
        return replace(self, params=params)


def mlp_init(
    layer_sizes,
    rng: np.random.Generator,
    activation: str = "relu",
    init: str = "uniform_fan_avg",
) -> Mlp:
    """Seeded initialization: scaled-uniform weights, zero biases.

    ``uniform_fan_avg`` draws weights from U(-a, a) with a = sqrt(6/(n_in+n_out));
    ``uniform_fan_in`` uses a = sqrt(6/n_in).  Biases are exactly zero.
    """
    if init not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {init!r}")
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
    params = np.zeros(param_count(sizes))
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        if init == "uniform_fan_avg":
            a = np.sqrt(6.0 / (nin + nout))
        else:
            a = np.sqrt(6.0 / nin)
        params[off : off + nin * nout] = rng.uniform(-a, a, size=nin * nout)
        off += nin * nout + nout  # skip biases, already zero
    return Mlp(layer_sizes=sizes, params=params, activation=activation)


class Tape:
    """Recorded forward state for one evaluation graph; single-use."""

    __slots__ = ("_weights", "_inputs", "_activation", "_sizes", "_single", "_used")

    def __init__(self, weights, inputs, activation, sizes, single):
        self._weights = weights
        self._inputs = inputs
        self._activation = activation
        self._sizes = sizes
        self._single = single
        self._used = False


def forward(mlp: Mlp, x) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on a single input vector or an (n, n_in) batch.

    Returns the output (same leading shape as the input) and a tape for one
    backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != mlp.n_in:
        raise ValueError(f"input width {a.shape[1]} does not match n_in={mlp.n_in}")
    layers = mlp._layers
    last = len(layers) - 1
    inputs = []
    for i, (w, b) in enumerate(layers):
        inputs.append(a)
        z = a @ w + b
        if i < last:
            a = np.maximum(z, 0.0) if mlp.activation == "relu" else np.tanh(z)
        else:
            a = z
    tape = Tape([w for w, _ in layers], inputs, mlp.activation, mlp.layer_sizes, single)
    return (a[0] if single else a), tape


def backward(tape: Tape, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Run the backward pass once, given d(loss)/d(output).

    Returns (d(loss)/d(params) as a flat vector, d(loss)/d(input) with the
    same shape as the forward input).  A tape cannot be reused.
    """
    if tape._used:
        raise RuntimeError("tape already consumed; run a new forward pass")
    tape._used = True
    g = np.asarray(upstream, dtype=np.float64)
    g = np.atleast_2d(g)
    n_out = tape._sizes[-1]
    if g.shape != (len(tape._inputs[0]), n_out):
        raise ValueError(
            f"upstream gradient shape {g.shape} does not match output "
            f"({len(tape._inputs[0])}, {n_out})"
        )
    dparams = np.empty(param_count(tape._sizes))
    # parameter offsets, walked backwards
    offsets = []
    off = 0
    for nin, nout in zip(tape._sizes[:-1], tape._sizes[1:]):
        offsets.append((off, nin, nout))
        off += (nin + 1) * nout
    delta = g
    for i in range(len(offsets) - 1, -1, -1):
        off, nin, nout = offsets[i]
        a_in = tape._inputs[i]
        dparams[off : off + nin * nout] = (a_in.T @ delta).ravel()
        dparams[off + nin * nout : off + (nin + 1) * nout] = delta.sum(axis=0)
        delta = delta @ tape._weights[i].T
        if i > 0:
            post = tape._inputs[i]  # post-activation of the previous hidden layer
            if tape._activation == "relu":
                delta = delta * (post > 0.0)
            else:
                delta = delta * (1.0 - post**2)
    dinput = delta[0] if tape._single else delta
    return dparams, dinput


def log_softmax(logits) -> np.ndarray:
    """Stable log-softmax along the last axis (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("log_softmax requires finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax_backward(log_q, upstream) -> np.ndarray:
    """d(loss)/d(logits) given log_q = log_softmax(logits) and d(loss)/d(log_q)."""
    u = np.asarray(upstream, dtype=np.float64)
    return u - np.exp(log_q) * u.sum(axis=-1, keepdims=True)


def _clamped(log_var: np.ndarray) -> np.ndarray:
    return np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


def gaussian_loglik(y, mu, log_var):
    """Diagonal-Gaussian log density of y at mean mu, log-variances log_var.

    -(d/2) log 2pi - (1/2) sum_j [(y_j - mu_j)^2 / sigma_j^2 + log sigma_j^2],
    with log_var clamped to [LOG_VAR_MIN, LOG_VAR_MAX] inside the graph.
    Accepts row vectors or (n, d) batches; returns a scalar or an (n,) array.
    """
    d = np.asarray(y).shape[-1]
    return gaussian_loglik_core(y, mu, log_var) - 0.5 * d * LOG_TWO_PI


def gaussian_loglik_core(y, mu, log_var):
    """As :func:`gaussian_loglik` but without the additive 2pi constant."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    lv = np.asarray(log_var, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
        raise ValueError("gaussian_loglik requires finite inputs")
    lvc = _clamped(lv)
    res = y - mu
    out = -0.5 * (res**2 * np.exp(-lvc) + lvc).sum(axis=-1)
    return out


def gaussian_loglik_backward(y, mu, log_var, upstream):
    """d(upstream . loglik)/d(mu) and /d(log_var), clamp-aware.

    ``upstream`` holds one weight per row (or a scalar for a single row);
    the same Jacobian serves the full and the constant-free variants.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    lv = np.asarray(log_var, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)[..., None]
    lvc = _clamped(lv)
    res = y - mu
    inv = np.exp(-lvc)
    dmu = u * res * inv
    dlv = u * 0.5 * (res**2 * inv - 1.0)
    active = (lv > LOG_VAR_MIN) & (lv < LOG_VAR_MAX)
    return dmu, np.where(active, dlv, 0.0)


def entropy_from_log_probs(log_q):
    """Shannon entropy -sum q log q of rows of log-probabilities."""
    lq = np.asarray(log_q, dtype=np.float64)
    return -(np.exp(lq) * lq).sum(axis=-1)


def entropy_backward(log_q, upstream) -> np.ndarray:
    """d(upstream . H)/d(log_q) for H = entropy_from_log_probs(log_q)."""
    lq = np.asarray(log_q, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)[..., None]
    return u * (-np.exp(lq) * (lq + 1.0))


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and step counter for ADAM."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), **kwargs)


def adam_step(params, grads, state: AdamState, eta: float):
    """One bias-corrected ADAM update; returns (new_params, new_state).

    Pure function of its inputs, hence deterministic; rejects non-finite
    gradients with a diagnostic.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} does not match params {params.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise ValueError(f"adam_step: {bad} non-finite gradient entries")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    new_params = params - eta * mhat / (np.sqrt(vhat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def save_params(mlp: Mlp, path) -> None:
    """Debug snapshot: uint32 layer count and sizes, then float64 LE params."""
    sizes = mlp.layer_sizes
    blob = struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes)
    blob += mlp.params.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_params(path, activation: str = "relu") -> Mlp:
    """Inverse of :func:`save_params`."""
    blob = Path(path).read_bytes()
    (n_layers,) = struct.unpack_from("<I", blob, 0)
    sizes = struct.unpack_from(f"<{n_layers}I", blob, 4)
    params = np.frombuffer(blob, dtype="<f8", offset=4 + 4 * n_layers).copy()
    return Mlp(layer_sizes=sizes, params=params, activation=activation)

"""The two probability models built on nnkit.

``GenerativeNet`` maps a constellation point x(s) to the mean and
log-variances of a diagonal Gaussian over the channel output (the learned
channel model).  ``EncoderNet`` maps a channel output y to 16 class logits
whose log-softmax is the approximate symbol posterior (the classifier).

Evaluation of a frozen parameter vector is read-only and safe from many
threads; training owns one instance per thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import K, QAM16, Constellation
from .nnkit import (
    Mlp,
    forward,
    gaussian_loglik,
    log_softmax,
    mlp_init,
)

DEFAULT_HIDDEN = (10, 30, 30)


@dataclass(frozen=True)
class GenerativeNet:
    """Learned channel model: constellation point -> (mu, log sigma^2) in R^2 x R^2."""

    mlp: Mlp

    def __post_init__(self) -> None:
        if self.mlp.n_in != 2 or self.mlp.n_out != 4:
            raise ValueError("generative net must map R^2 -> R^4 (mu and log-variances)")


@dataclass(frozen=True)
class EncoderNet:
    """Classifier: channel output -> 16 logits, softmax-normalized into a posterior.

    ``input_mean``/``input_scale`` optionally standardize the input; they
    default to the identity transform (standardization is off by default
    because the channel output already has order-one scale).
    """

    mlp: Mlp
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self) -> None:
        if self.mlp.n_in != 2 or self.mlp.n_out != K:
            raise ValueError(f"encoder net must map R^2 -> R^{K}")
        mean = np.asarray(self.input_mean, dtype=np.float64)
        scale = np.asarray(self.input_scale, dtype=np.float64)
        if mean.shape != (2,) or scale.shape != (2,):
            raise ValueError("input_mean and input_scale must be 2-vectors")
        if not (scale > 0).all():
            raise ValueError("input_scale must be positive")
        object.__setattr__(self, "input_mean", mean)
        object.__setattr__(self, "input_scale", scale)


def init_generative(
    rng: np.random.Generator, hidden=DEFAULT_HIDDEN, activation: str = "relu"
) -> GenerativeNet:
    return GenerativeNet(mlp_init((2, *hidden, 4), rng, activation=activation))


def init_encoder(
    rng: np.random.Generator,
    hidden=DEFAULT_HIDDEN,
    activation: str = "relu",
    input_mean=None,
    input_scale=None,
) -> EncoderNet:
    mlp = mlp_init((2, *hidden, K), rng, activation=activation)
    kwargs = {}
    if input_mean is not None:
        kwargs["input_mean"] = input_mean
    if input_scale is not None:
        kwargs["input_scale"] = input_scale
    return EncoderNet(mlp, **kwargs)


def generative_forward(gen: GenerativeNet, x):
    """Evaluate the generative net; returns (mu, log_var, tape)."""
    out, tape = forward(gen.mlp, x)
    return out[..., :2], out[..., 2:], tape


def encoder_forward(enc: EncoderNet, y):
    """Evaluate the encoder on (standardized) channel outputs; returns (logits, tape)."""
    z = (np.asarray(y, dtype=np.float64) - enc.input_mean) / enc.input_scale
    return forward(enc.mlp, z)


def decoder_logliks(gen: GenerativeNet, y, constellation: Constellation = QAM16) -> np.ndarray:
    """log p(y | s) for every s, via one batched forward over the 16 points.

    ``y`` may be a 2-vector (returns shape (16,)) or an (n, 2) batch
    (returns (n, 16)).  Forward-only; no tape survives this call.
    """
    out, _ = forward(gen.mlp, constellation.points)
    mu, lv = out[:, :2], out[:, 2:]
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yy = np.atleast_2d(y)
    ll = gaussian_loglik(yy[:, None, :], mu[None, :, :], lv[None, :, :])
    return ll[0] if single else ll


def decoder_loglik(gen: GenerativeNet, y, s: int, constellation: Constellation = QAM16) -> float:
    """log p(y | s) for one symbol index s in 1..16."""
    if not 1 <= int(s) <= K:
        raise ValueError(f"symbol index must lie in 1..{K}, got {s}")
    mu, lv, _ = generative_forward(gen, constellation.points[int(s) - 1])
    return float(gaussian_loglik(np.asarray(y, dtype=np.float64), mu, lv))


def decoder_posterior(gen: GenerativeNet, y, constellation: Constellation = QAM16) -> np.ndarray:
    """Symbol posterior p(s | y) under a uniform prior: softmax of the log-likelihoods."""
    ll = decoder_logliks(gen, y, constellation)
    shifted = ll - ll.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    return p / p.sum(axis=-1, keepdims=True)


def encoder_log_posterior(enc: EncoderNet, y) -> np.ndarray:
    """log q(s | y): log-softmax of the encoder logits."""
    logits, _ = encoder_forward(enc, y)
    return log_softmax(logits)


def encoder_posterior(enc: EncoderNet, y) -> np.ndarray:
    """q(s | y) as a probability vector (rows sum to one)."""
    return np.exp(encoder_log_posterior(enc, y))


def log_marginal(gen: GenerativeNet, y, constellation: Constellation = QAM16):
    """log p(y) by exact enumeration over the 16 symbols with a uniform prior.

    Feasible because the alphabet is tiny; used for diagnostics and for
    validating the variational bound.
    """
    ll = decoder_logliks(gen, y, constellation)
    m = ll.max(axis=-1, keepdims=True)
    lse = m.squeeze(-1) + np.log(np.exp(ll - m).sum(axis=-1))
    return lse - np.log(K)


def elbo(gen: GenerativeNet, y, q, constellation: Constellation = QAM16):
    """Variational lower bound on log p(y) for a surrogate posterior q over s.

    sum_s q(s) [ -log q(s) + log p(y|s) - log 16 ], with 0 log 0 read as 0.
    Equals log p(y) exactly when q is the true posterior.
    """
    q = np.asarray(q, dtype=np.float64)
    ll = decoder_logliks(gen, y, constellation)
    inner = ll - np.log(K) - np.log(q, where=q > 0, out=np.zeros_like(q))
    return (q * inner).sum(axis=-1)

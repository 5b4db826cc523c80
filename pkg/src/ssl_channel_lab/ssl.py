"""Training procedures and decode rules for the semi-supervised decoders.

Five trainers (supervised on a fully labeled block, decision-directed
self-training, Monte-Carlo EM, hard-decision EM and a Gumbel-softmax VAE)
plus the annealing schedules and the categorical relaxation they share.

Every trainer consumes a single rng in a documented order and is bitwise
deterministic given its seed.  Trainers for different devices can run
concurrently with independent rng streams; nothing here shares state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import K, QAM16, Block, Constellation
from .models import (
    EncoderNet,
    GenerativeNet,
    decoder_logliks,
    decoder_posterior,
    encoder_forward,
    encoder_posterior,
    init_encoder,
    init_generative,
)
from .nnkit import (
    AdamState,
    adam_step,
    backward,
    entropy_backward,
    entropy_from_log_probs,
    forward,
    gaussian_loglik,
    gaussian_loglik_backward,
    gaussian_loglik_core,
    log_softmax,
    log_softmax_backward,
)

GUMBEL_UNIFORM_CLAMP = 1e-12
TAU_FLOOR = 0.5
BETA_CAP = 40.0


class TrainingDiverged(RuntimeError):
    """Raised when a trainer encounters a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by all trainers.

    The defaults are the benchmark operating point: 16-symbol pilot batches,
    32-symbol payload batches, 5000 ADAM updates at learning rate 0.001,
    1500 warmup updates for the decision-directed stage, fixed gamma0 = 0.98
    for its second stage, entropy/posterior weight alpha = 0.2 and 100-update
    windows for the annealing schedules.
    """

    n_pilot_batch: int = 16
    n_payload_batch: int = 32
    total_updates: int = 5000
    sdd_warmup: int = 1500
    gamma0: float = 0.98
    alpha: float = 0.2
    schedule_period: int = 100
    eta: float = 0.001
    standardize_input: bool = False
    activation: str = "relu"
    hidden_sizes: tuple = (10, 30, 30)

    def __post_init__(self) -> None:
        if self.n_pilot_batch < 1 or self.n_payload_batch < 1:
            raise ValueError("batch sizes must be positive")
        if self.total_updates < 0:
            raise ValueError("total_updates must be >= 0")
        if not 0 <= self.sdd_warmup <= self.total_updates:
            raise ValueError("sdd_warmup must lie in 0..total_updates")
        if not 0.0 < self.gamma0 < 1.0:
            raise ValueError("gamma0 must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.schedule_period < 1:
            raise ValueError("schedule_period must be positive")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")


# ---------------------------------------------------------------------------
# annealing schedules, held constant within each schedule window


def _window_anchor(l: int, period: int) -> int:
    if l < 1:
        raise ValueError(f"update index must be >= 1, got {l}")
    return period * ((l - 1) // period) + 1


def tau_schedule(l: int, period: int = 100) -> float:
    """Relaxation temperature at update l: max(0.5, exp(-0.001 (l'-1))).

    l' anchors l to the start of its window, so the temperature is constant
    for ``period`` consecutive updates.
    """
    anchor = _window_anchor(l, period)
    return max(TAU_FLOOR, math.exp(-0.001 * (anchor - 1)))


def gamma_schedule(l: int, n: int, n_pilots: int, period: int = 100) -> float:
    """Pilot weight gamma_l = 1 / (1 + beta_l) at update l.

    beta_l = min(2 exp(0.0008 (l'-1)), beta_max) grows from 2 toward
    beta_max = min((n - n_pilots) / n_pilots, 40), shifting weight from the
    pilot term toward the payload term as training proceeds.  Windowed like
    :func:`tau_schedule`.
    """
    if not 1 <= n_pilots < n:
        raise ValueError("need 1 <= n_pilots < n")
    anchor = _window_anchor(l, period)
    beta_max = min((n - n_pilots) / n_pilots, BETA_CAP)
    growth = 0.0008 * (anchor - 1)
    # compare in log space so huge update indices cannot overflow exp
    beta = beta_max if growth >= math.log(beta_max / 2.0) else 2.0 * math.exp(growth)
    return 1.0 / (1.0 + beta)


# ---------------------------------------------------------------------------
# Gumbel-softmax relaxation


def gumbel_from_uniform(u):
    """Map uniform draws to Gumbel(0, 1) via -log(-log u).

    u is clamped to [1e-12, 1 - 1e-12] first, so the output is always finite.
    """
    u = np.clip(np.asarray(u, dtype=np.float64), GUMBEL_UNIFORM_CLAMP, 1.0 - GUMBEL_UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def gumbel_sample(rng: np.random.Generator, size=None):
    """Gumbel(0, 1) noise of the requested shape (a scalar when size is None)."""
    return gumbel_from_uniform(rng.random(size))


@dataclass(frozen=True)
class RelaxedSample:
    """One relaxed categorical draw.

    ``stilde`` lies on the probability simplex; ``xtilde`` is the matching
    convex combination of the constellation points.
    """

    stilde: np.ndarray
    xtilde: np.ndarray
    tau: float


def gumbel_softmax_relax(log_q, g, tau: float, constellation: Constellation = QAM16) -> RelaxedSample:
    """Relax a categorical draw: stilde = softmax((log_q + g) / tau).

    Differentiable in log_q for tau > 0; as tau -> 0 the sample approaches
    the one-hot vector at argmax(log_q + g) and xtilde approaches the
    corresponding constellation point.
    """
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    a = (np.asarray(log_q, dtype=np.float64) + np.asarray(g, dtype=np.float64)) / tau
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    st = e / e.sum(axis=-1, keepdims=True)
    return RelaxedSample(stilde=st, xtilde=st @ constellation.points, tau=tau)


def categorical_sample(rng: np.random.Generator, probs) -> np.ndarray:
    """Sample one label (1-based) per row of a categorical probability matrix."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    cdf = np.cumsum(p, axis=1)
    cdf[:, -1] = 1.0  # guard against roundoff in the last bin
    u = rng.random(len(p))
    return (u[:, None] >= cdf).sum(axis=1).astype(np.int64) + 1


# ---------------------------------------------------------------------------
# loss graphs (value plus hand-chained reverse pass); pure functions used by
# the trainers and by the gradient checks


def cross_entropy_loss(enc: EncoderNet, y, labels, weights):
    """Weighted negative log posterior: -sum_i w_i log q(s_i | y_i).

    Returns (loss, d loss / d encoder params).
    """
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    logits, tape = encoder_forward(enc, y)
    logq = log_softmax(logits)
    rows = np.arange(len(labels))
    loss = -(w * logq[rows, labels - 1]).sum()
    dlogq = np.zeros_like(logq)
    dlogq[rows, labels - 1] = -w
    dphi, _ = backward(tape, log_softmax_backward(logq, dlogq))
    return float(loss), dphi


def generative_nll_loss(gen: GenerativeNet, x_in, y, weights):
    """Weighted Gaussian negative log-likelihood: -sum_i w_i log p(y_i | x_i).

    ``x_in`` holds the (possibly relabeled) constellation points fed to the
    generative net.  Returns (loss, d loss / d generative params).
    """
    w = np.asarray(weights, dtype=np.float64)
    out, tape = forward(gen.mlp, x_in)
    mu, lv = out[:, :2], out[:, 2:]
    ll = gaussian_loglik(y, mu, lv)
    loss = -(w * ll).sum()
    dmu, dlv = gaussian_loglik_backward(y, mu, lv, -w)
    dtheta, _ = backward(tape, np.concatenate([dmu, dlv], axis=1))
    return float(loss), dtheta


def vae_loss(
    enc: EncoderNet,
    gen: GenerativeNet,
    pilot_y,
    pilot_s,
    payload_y,
    gumbel,
    tau: float,
    gamma: float,
    alpha: float,
    constellation: Constellation = QAM16,
):
    """Joint loss for one update of the relaxed variational trainer.

    Pilot part: alpha-weighted cross entropy on the encoder plus
    gamma-weighted Gaussian log-likelihood on the generative net, both over
    the same pilot batch.  Payload part, weighted by (1 - gamma): the exact
    16-term entropy of q plus a single relaxed-sample reconstruction term per
    element, with the constant of the Gaussian dropped (it carries no
    gradient).  The relaxed point xtilde feeds the generative net, so the
    reconstruction gradient reaches the encoder through the mixing weights.

    Returns (loss, d/d encoder params, d/d generative params).
    """
    pilot_s = np.asarray(pilot_s, dtype=np.int64)
    n_p, n_u = len(pilot_s), len(payload_y)
    y_all = np.concatenate([np.asarray(pilot_y, dtype=np.float64), np.asarray(payload_y, dtype=np.float64)])

    logits, tape_e = encoder_forward(enc, y_all)
    logq = log_softmax(logits)
    logq_p, logq_u = logq[:n_p], logq[n_p:]

    rel = gumbel_softmax_relax(logq_u, gumbel, tau, constellation)
    x_in = np.concatenate([constellation.points[pilot_s - 1], rel.xtilde])
    out, tape_g = forward(gen.mlp, x_in)
    mu, lv = out[:, :2], out[:, 2:]

    ll_pilot = gaussian_loglik(y_all[:n_p], mu[:n_p], lv[:n_p])
    ll_payload = gaussian_loglik_core(y_all[n_p:], mu[n_p:], lv[n_p:])
    ent = entropy_from_log_probs(logq_u)

    rows = np.arange(n_p)
    loss = (
        -(alpha / n_p) * logq_p[rows, pilot_s - 1].sum()
        - (gamma / n_p) * ll_pilot.sum()
        - ((1.0 - gamma) / n_u) * (ent + ll_payload).sum()
    )

    # reverse pass: generative net first, then chain into the encoder
    u_ll = np.concatenate([np.full(n_p, -(gamma / n_p)), np.full(n_u, -((1.0 - gamma) / n_u))])
    dmu, dlv = gaussian_loglik_backward(y_all, mu, lv, u_ll)
    dtheta, dx = backward(tape_g, np.concatenate([dmu, dlv], axis=1))

    dxt = dx[n_p:]
    dst = dxt @ constellation.points.T
    dlogq_u = rel.stilde * (dst - (dst * rel.stilde).sum(axis=1, keepdims=True)) / tau
    dlogq_u += entropy_backward(logq_u, np.full(n_u, -((1.0 - gamma) / n_u)))
    dlogq_p = np.zeros_like(logq_p)
    dlogq_p[rows, pilot_s - 1] = -(alpha / n_p)

    dlogits = log_softmax_backward(logq, np.concatenate([dlogq_p, dlogq_u]))
    dphi, _ = backward(tape_e, dlogits)
    return float(loss), dphi, dtheta


# ---------------------------------------------------------------------------
# mini-batch machinery


class _EpochSampler:
    """Uniform mini-batches over ``n`` items.

    If the pool matches the batch size exactly, every batch is the full pool
    in order (no rng consumed).  Larger pools are sampled without replacement
    in shuffled epochs; a short tail is dropped and a fresh epoch begins.
    Pools smaller than one batch fall back to sampling with replacement.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self._n = n
        self._batch = batch_size
        self._rng = rng
        self._perm = None
        self._pos = 0

    def take(self) -> np.ndarray:
        if self._n == self._batch:
            return np.arange(self._n)
        if self._n < self._batch:
            return self._rng.integers(0, self._n, size=self._batch)
        if self._perm is None or self._pos + self._batch > self._n:
            self._perm = self._rng.permutation(self._n)
            self._pos = 0
        out = self._perm[self._pos : self._pos + self._batch]
        self._pos += self._batch
        return out


def _check_finite(loss: float, update: int, what: str) -> None:
    if not math.isfinite(loss):
        raise TrainingDiverged(f"{what}: non-finite loss {loss!r} at update {update}")


def _fresh_encoder(block: Block, cfg: TrainConfig, rng: np.random.Generator) -> EncoderNet:
    kwargs = {}
    if cfg.standardize_input:
        kwargs["input_mean"] = block.outputs.mean(axis=0)
        kwargs["input_scale"] = np.maximum(block.outputs.std(axis=0), 1e-6)
    return init_encoder(rng, hidden=cfg.hidden_sizes, activation=cfg.activation, **kwargs)


def _adam_into(net_params: np.ndarray, grads, state: AdamState, eta: float) -> AdamState:
    new_params, state = adam_step(net_params, grads, state, eta)
    np.copyto(net_params, new_params)
    return state


# ---------------------------------------------------------------------------
# trainers


def train_all_pilots(
    block: Block, cfg: TrainConfig, rng: np.random.Generator, constellation: Constellation = QAM16
) -> EncoderNet:
    """Supervised baseline: treat every symbol in the block as labeled.

    Runs ``total_updates`` ADAM steps of plain cross entropy over mini
    batches of ``n_pilot_batch`` labeled samples.
    """
    enc = _fresh_encoder(block, cfg, rng)
    state = AdamState.for_params(enc.mlp.params)
    sampler = _EpochSampler(len(block), cfg.n_pilot_batch, rng)
    y, s = block.outputs, block.symbols
    for l in range(1, cfg.total_updates + 1):
        idx = sampler.take()
        w = np.full(len(idx), 1.0 / len(idx))
        loss, dphi = cross_entropy_loss(enc, y[idx], s[idx], w)
        _check_finite(loss, l, "all_pilots")
        state = _adam_into(enc.mlp.params, dphi, state, cfg.eta)
    return enc


def pseudo_label(enc: EncoderNet, y) -> np.ndarray:
    """Hard labels from the encoder: argmax of q(. | y), lowest index on ties."""
    return decode_encoder(enc, y)


def train_sdd(
    block: Block, cfg: TrainConfig, rng: np.random.Generator, constellation: Constellation = QAM16
) -> EncoderNet:
    """Decision-directed self-training of the encoder.

    Stage 1 runs ``sdd_warmup`` cross-entropy updates on the pilot batch
    alone.  The warmed-up encoder then labels the payload once; stage 2 runs
    the remaining updates on a two-term loss that keeps weight ``gamma0`` on
    the pilots and ``1 - gamma0`` on the pseudo-labeled payload.
    """
    enc = _fresh_encoder(block, cfg, rng)
    state = AdamState.for_params(enc.mlp.params)
    pilot_sampler = _EpochSampler(block.n_pilots, cfg.n_pilot_batch, rng)
    payload_sampler = _EpochSampler(len(block) - block.n_pilots, cfg.n_payload_batch, rng)
    p_y, p_s = block.pilot_outputs, block.pilot_symbols
    u_y = block.payload_outputs

    for l in range(1, cfg.sdd_warmup + 1):
        idx = pilot_sampler.take()
        w = np.full(len(idx), 1.0 / len(idx))
        loss, dphi = cross_entropy_loss(enc, p_y[idx], p_s[idx], w)
        _check_finite(loss, l, "sdd warmup")
        state = _adam_into(enc.mlp.params, dphi, state, cfg.eta)

    labels = pseudo_label(enc, u_y)

    for l in range(cfg.sdd_warmup + 1, cfg.total_updates + 1):
        pidx = pilot_sampler.take()
        uidx = payload_sampler.take()
        y_cat = np.concatenate([p_y[pidx], u_y[uidx]])
        s_cat = np.concatenate([p_s[pidx], labels[uidx]])
        w = np.concatenate(
            [
                np.full(len(pidx), cfg.gamma0 / len(pidx)),
                np.full(len(uidx), (1.0 - cfg.gamma0) / len(uidx)),
            ]
        )
        loss, dphi = cross_entropy_loss(enc, y_cat, s_cat, w)
        _check_finite(loss, l, "sdd")
        state = _adam_into(enc.mlp.params, dphi, state, cfg.eta)
    return enc


def _train_em(
    block: Block,
    cfg: TrainConfig,
    rng: np.random.Generator,
    constellation: Constellation,
    hard: bool,
    name: str,
) -> GenerativeNet:
    gen = init_generative(rng, hidden=cfg.hidden_sizes, activation=cfg.activation)
    state = AdamState.for_params(gen.mlp.params)
    pilot_sampler = _EpochSampler(block.n_pilots, cfg.n_pilot_batch, rng)
    payload_sampler = _EpochSampler(len(block) - block.n_pilots, cfg.n_payload_batch, rng)
    p_y, p_s = block.pilot_outputs, block.pilot_symbols
    u_y = block.payload_outputs

    for l in range(1, cfg.total_updates + 1):
        gamma = gamma_schedule(l, len(block), block.n_pilots, cfg.schedule_period)
        pidx = pilot_sampler.take()
        uidx = payload_sampler.take()
        batch_y = u_y[uidx]
        post = decoder_posterior(gen, batch_y, constellation)  # forward-only
        if hard:
            labels = post.argmax(axis=1).astype(np.int64) + 1
        else:
            labels = categorical_sample(rng, post)
        x_in = np.concatenate([constellation.points[p_s[pidx] - 1], constellation.points[labels - 1]])
        y_cat = np.concatenate([p_y[pidx], batch_y])
        w = np.concatenate(
            [
                np.full(len(pidx), gamma / len(pidx)),
                np.full(len(uidx), (1.0 - gamma) / len(uidx)),
            ]
        )
        loss, dtheta = generative_nll_loss(gen, x_in, y_cat, w)
        _check_finite(loss, l, name)
        state = _adam_into(gen.mlp.params, dtheta, state, cfg.eta)
    return gen


def train_mcem(
    block: Block, cfg: TrainConfig, rng: np.random.Generator, constellation: Constellation = QAM16
) -> GenerativeNet:
    """Monte-Carlo EM on the generative channel model.

    Each update draws a payload mini-batch, samples one label per element
    from the current posterior (soft decision), and takes one ADAM step on
    the weighted Gaussian negative log-likelihood with the annealed gamma.
    """
    return _train_em(block, cfg, rng, constellation, hard=False, name="mcem")


def train_viterbi_em(
    block: Block, cfg: TrainConfig, rng: np.random.Generator, constellation: Constellation = QAM16
) -> GenerativeNet:
    """Hard-decision EM: like :func:`train_mcem` but labels are the posterior
    argmax (lowest index on ties) instead of samples."""
    return _train_em(block, cfg, rng, constellation, hard=True, name="viterbi_em")


def train_vae(
    block: Block, cfg: TrainConfig, rng: np.random.Generator, constellation: Constellation = QAM16
) -> tuple[EncoderNet, GenerativeNet]:
    """Joint training of encoder and generative net with a relaxed latent.

    Per update: the full pilot batch feeds both pilot terms, one Gumbel
    softmax sample per payload element feeds the reconstruction term, and a
    single joint ADAM step updates both parameter vectors.  Temperature and
    gamma follow their windowed schedules.  rng order per update: pilot
    batch, payload batch, Gumbel noise.
    """
    enc = _fresh_encoder(block, cfg, rng)
    gen = init_generative(rng, hidden=cfg.hidden_sizes, activation=cfg.activation)
    state_phi = AdamState.for_params(enc.mlp.params)
    state_theta = AdamState.for_params(gen.mlp.params)
    pilot_sampler = _EpochSampler(block.n_pilots, cfg.n_pilot_batch, rng)
    payload_sampler = _EpochSampler(len(block) - block.n_pilots, cfg.n_payload_batch, rng)
    p_y, p_s = block.pilot_outputs, block.pilot_symbols
    u_y = block.payload_outputs

    for l in range(1, cfg.total_updates + 1):
        tau = tau_schedule(l, cfg.schedule_period)
        gamma = gamma_schedule(l, len(block), block.n_pilots, cfg.schedule_period)
        pidx = pilot_sampler.take()
        uidx = payload_sampler.take()
        g = gumbel_sample(rng, (len(uidx), K))
        loss, dphi, dtheta = vae_loss(
            enc, gen, p_y[pidx], p_s[pidx], u_y[uidx], g, tau, gamma, cfg.alpha, constellation
        )
        _check_finite(loss, l, "vae")
        state_phi = _adam_into(enc.mlp.params, dphi, state_phi, cfg.eta)
        state_theta = _adam_into(gen.mlp.params, dtheta, state_theta, cfg.eta)
    return enc, gen


# ---------------------------------------------------------------------------
# decode rules


def decode_encoder(enc: EncoderNet, y):
    """argmax_s q(s | y); equals the argmax of the raw logits. Ties -> lowest index."""
    logits, _ = encoder_forward(enc, y)
    s = np.argmax(np.atleast_2d(logits), axis=1).astype(np.int64) + 1
    return int(s[0]) if np.asarray(y).ndim == 1 else s


def decode_generative(gen: GenerativeNet, y, constellation: Constellation = QAM16):
    """argmax_s log p(y | s) under the learned channel model. Ties -> lowest index."""
    ll = decoder_logliks(gen, y, constellation)
    s = np.argmax(np.atleast_2d(ll), axis=1).astype(np.int64) + 1
    return int(s[0]) if np.asarray(y).ndim == 1 else s


def decode_combined(enc: EncoderNet, gen: GenerativeNet, y, constellation: Constellation = QAM16):
    """argmax of the averaged posteriors q(s | y) + p(s | y). Ties -> lowest index."""
    total = encoder_posterior(enc, y) + decoder_posterior(gen, y, constellation)
    s = np.argmax(np.atleast_2d(total), axis=1).astype(np.int64) + 1
    return int(s[0]) if np.asarray(y).ndim == 1 else s

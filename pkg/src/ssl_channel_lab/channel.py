"""16-QAM over a nonlinear memoryless channel, and its known-channel decoder.

Each transmitted constellation point passes through a fixed 2x2 I/Q
imbalance map, is multiplied by a block-constant Rayleigh fading coefficient
and receives additive white complex Gaussian noise.  Complex arithmetic is
spelled out on length-2 real vectors throughout, so nothing here depends on
a complex dtype.

All types are immutable after construction and all operations are pure given
an rng handle, so device simulations can run concurrently as long as every
worker owns its own rng stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

K = 16
QAM_LEVELS = (-3.0, -1.0, 1.0, 3.0)
MEAN_POWER = 10.0
MAX_EPSILON = 0.15
MAX_DELTA = float(np.deg2rad(15.0))


def _qam16_points() -> np.ndarray:
    # Row-major mapping: s - 1 = 4a + b with x_I = levels[a], x_Q = levels[b].
    pts = np.empty((K, 2))
    for s in range(K):
        a, b = divmod(s, 4)
        pts[s, 0] = QAM_LEVELS[a]
        pts[s, 1] = QAM_LEVELS[b]
    return pts


@dataclass(frozen=True)
class Constellation:
    """A size-16 signal set with I/Q coordinates in {+-1, +-3}.

    Any bijective re-indexing of the 16 grid points is a valid constellation;
    the default ``QAM16`` uses the row-major order above.
    """

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (K, 2):
            raise ValueError(f"constellation must have shape ({K}, 2), got {pts.shape}")
        if not np.isin(pts, QAM_LEVELS).all():
            raise ValueError("constellation coordinates must lie in {+-1, +-3}")
        if len({(p, q) for p, q in pts.tolist()}) != K:
            raise ValueError("constellation points must be distinct")
        object.__setattr__(self, "points", pts)

    @property
    def mean_power(self) -> float:
        return float((self.points**2).sum(axis=1).mean())


QAM16 = Constellation(_qam16_points())


def constellation_point(s: int, constellation: Constellation = QAM16) -> np.ndarray:
    """Return the 2-vector (x_I, x_Q) for symbol index ``s`` in 1..16."""
    if not 1 <= int(s) <= K or int(s) != s:
        raise ValueError(f"symbol index must be an integer in 1..{K}, got {s!r}")
    return constellation.points[int(s) - 1].copy()


def noise_variance(snr_db: float) -> float:
    """Noise power per complex sample at a given SNR in dB (SNR = 10 / sigma^2)."""
    return MEAN_POWER / 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """One device realization: imbalance (epsilon, delta), fading h, noise power.

    ``h`` is stored as (real, imag).  ``sigma2`` must be consistent with
    ``snr_db``; use :meth:`for_snr` to construct without repeating the formula.
    """

    epsilon: float
    delta: float
    h: np.ndarray
    sigma2: float
    snr_db: float

    def __post_init__(self) -> None:
        h = np.array(self.h, dtype=np.float64)
        if h.shape != (2,):
            raise ValueError("h must be a length-2 vector (real, imag)")
        object.__setattr__(self, "h", h)
        if not 0.0 <= self.epsilon <= MAX_EPSILON:
            raise ValueError(f"epsilon out of range [0, {MAX_EPSILON}]: {self.epsilon}")
        if not 0.0 <= self.delta <= MAX_DELTA * (1 + 1e-12):
            raise ValueError(f"delta out of range [0, {MAX_DELTA}]: {self.delta}")
        if not self.sigma2 > 0.0:
            raise ValueError("sigma2 must be positive")
        expected = noise_variance(self.snr_db)
        if abs(self.sigma2 - expected) > 1e-9 * expected:
            raise ValueError(f"sigma2={self.sigma2} inconsistent with snr_db={self.snr_db}")

    @classmethod
    def for_snr(cls, epsilon: float, delta: float, h, snr_db: float) -> "ChannelParams":
        return cls(epsilon=epsilon, delta=delta, h=h, sigma2=noise_variance(snr_db), snr_db=snr_db)


@dataclass(frozen=True)
class Block:
    """One device transmission: true symbols, channel outputs, pilot count.

    The first ``n_pilots`` symbols are known to the receiver; the rest are
    payload.  ``symbols`` always carries the full truth so that evaluation
    (and the fully supervised baseline) can see it.
    """

    symbols: np.ndarray
    outputs: np.ndarray
    n_pilots: int

    def __post_init__(self) -> None:
        symbols = np.array(self.symbols, dtype=np.int64)
        outputs = np.array(self.outputs, dtype=np.float64)
        if symbols.ndim != 1 or len(symbols) == 0:
            raise ValueError("symbols must be a nonempty 1-D array")
        if symbols.min() < 1 or symbols.max() > K:
            raise ValueError(f"symbols must lie in 1..{K}")
        if outputs.shape != (len(symbols), 2):
            raise ValueError("outputs must have shape (len(symbols), 2)")
        if not 0 <= self.n_pilots <= len(symbols):
            raise ValueError("n_pilots must be in 0..len(symbols)")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "outputs", outputs)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pilot_symbols(self) -> np.ndarray:
        return self.symbols[: self.n_pilots]

    @property
    def pilot_outputs(self) -> np.ndarray:
        return self.outputs[: self.n_pilots]

    @property
    def payload_symbols(self) -> np.ndarray:
        return self.symbols[self.n_pilots :]

    @property
    def payload_outputs(self) -> np.ndarray:
        return self.outputs[self.n_pilots :]


def sample_beta52(rng: np.random.Generator) -> float:
    """One Beta(5, 2) draw via the Gamma-ratio construction."""
    g1 = rng.gamma(5.0)
    g2 = rng.gamma(2.0)
    return float(g1 / (g1 + g2))


def sample_device(rng: np.random.Generator, snr_db: float) -> ChannelParams:
    """Draw one device realization at the given SNR.

    epsilon and delta are independent scaled Beta(5, 2) draws; h is a unit
    variance complex Gaussian (i.i.d. N(0, 1/2) real and imaginary parts).
    Draw order is fixed (epsilon, delta, h) for reproducibility.
    """
    eps = MAX_EPSILON * sample_beta52(rng)
    dlt = MAX_DELTA * sample_beta52(rng)
    h = rng.standard_normal(2) * np.sqrt(0.5)
    return ChannelParams.for_snr(epsilon=eps, delta=dlt, h=h, snr_db=snr_db)


def imbalance_matrix(epsilon: float, delta: float) -> np.ndarray:
    """The 2x2 gain/mixing matrix applied to (x_I, x_Q) before fading."""
    c, s = np.cos(delta), np.sin(delta)
    return np.array(
        [
            [(1.0 + epsilon) * c, -(1.0 + epsilon) * s],
            [-(1.0 - epsilon) * s, (1.0 - epsilon) * c],
        ]
    )


def iq_imbalance(x, epsilon: float, delta: float) -> np.ndarray:
    """Apply the I/Q imbalance map to a 2-vector or an (n, 2) batch."""
    return np.asarray(x, dtype=np.float64) @ imbalance_matrix(epsilon, delta).T


def complex_multiply(a, b) -> np.ndarray:
    """Multiply complex numbers stored as (real, imag); ``b`` may be a batch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty_like(b)
    out[..., 0] = a[0] * b[..., 0] - a[1] * b[..., 1]
    out[..., 1] = a[0] * b[..., 1] + a[1] * b[..., 0]
    return out


def transmit_block(
    params: ChannelParams,
    symbols,
    rng: np.random.Generator,
    n_pilots: int = 0,
    constellation: Constellation = QAM16,
) -> Block:
    """Push a symbol sequence through one device's channel.

    y_i = h * imbalance(x(s_i)) + v_i with v_i i.i.d. complex Gaussian of
    total variance sigma2 per sample.  Deterministic for a fixed rng state.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim != 1 or len(symbols) == 0:
        raise ValueError("symbols must be a nonempty 1-D sequence")
    if symbols.min() < 1 or symbols.max() > K:
        raise ValueError(f"symbols must lie in 1..{K}")
    x = constellation.points[symbols - 1]
    distorted = iq_imbalance(x, params.epsilon, params.delta)
    clean = complex_multiply(params.h, distorted)
    noise = rng.standard_normal((len(symbols), 2)) * np.sqrt(params.sigma2 / 2.0)
    return Block(symbols=symbols, outputs=clean + noise, n_pilots=n_pilots)


def channel_images(params: ChannelParams, constellation: Constellation = QAM16) -> np.ndarray:
    """Noise-free received point h * imbalance(x(s)) for every symbol, (16, 2)."""
    return complex_multiply(
        params.h, iq_imbalance(constellation.points, params.epsilon, params.delta)
    )


def optimal_decode(params: ChannelParams, y, constellation: Constellation = QAM16):
    """Maximum-likelihood decoding with the true channel known.

    Returns argmin over s of |y - h * imbalance(x(s))|^2 (ML for circular
    Gaussian noise); ties break toward the lowest index.  ``y`` may be a
    single 2-vector (returns int) or an (n, 2) batch (returns an int array).
    """
    images = channel_images(params, constellation)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yy = np.atleast_2d(y)
    d2 = ((yy[:, None, :] - images[None, :, :]) ** 2).sum(axis=2)
    s = d2.argmin(axis=1) + 1
    return int(s[0]) if single else s

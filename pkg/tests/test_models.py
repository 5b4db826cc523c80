"""Generative / encoder models: likelihoods, posteriors, variational bound."""

import math

import numpy as np
import pytest

from ssl_channel_lab.channel import QAM16, ChannelParams, channel_images
from ssl_channel_lab.models import (
    EncoderNet,
    GenerativeNet,
    decoder_loglik,
    decoder_logliks,
    decoder_posterior,
    elbo,
    encoder_posterior,
    init_encoder,
    init_generative,
    log_marginal,
)
from ssl_channel_lab.nnkit import Mlp, gaussian_loglik, param_count
from ssl_channel_lab.ssl import decode_encoder

LOG_2PI = 1.8378770664093453


def constant_output_generative(mu, log_var) -> GenerativeNet:
    """All-zero weights, output bias set to (mu, log_var): ignores the input."""
    sizes = (2, 10, 30, 30, 4)
    params = np.zeros(param_count(sizes))
    params[-4:-2] = mu
    params[-2:] = log_var
    return GenerativeNet(Mlp(sizes, params))


def linear_exact_generative(a_matrix, log_var=0.0) -> GenerativeNet:
    """A ReLU net computing mu = A x exactly via the split x = relu(x) - relu(-x).

    Output log-variances are the constant ``log_var``.
    """
    sizes = (2, 4, 4, 4, 4)
    params = np.zeros(param_count(sizes))
    off = 0

    def put_weight(w):
        nonlocal off
        nin, nout = w.shape
        params[off : off + nin * nout] = w.ravel()
        off += nin * nout + nout  # leave bias zero

    w1 = np.zeros((2, 4))
    w1[0, 0], w1[0, 1], w1[1, 2], w1[1, 3] = 1.0, -1.0, 1.0, -1.0
    put_weight(w1)
    put_weight(np.eye(4))  # relu of nonnegative values is the identity
    put_weight(np.eye(4))
    a = np.asarray(a_matrix, dtype=float)
    w4 = np.zeros((4, 4))
    w4[0, 0], w4[1, 0] = a[0, 0], -a[0, 0]
    w4[2, 0], w4[3, 0] = a[0, 1], -a[0, 1]
    w4[0, 1], w4[1, 1] = a[1, 0], -a[1, 0]
    w4[2, 1], w4[3, 1] = a[1, 1], -a[1, 1]
    nin, nout = 4, 4
    params[off : off + nin * nout] = w4.ravel()
    params[off + nin * nout + 2 : off + nin * nout + 4] = log_var  # log-variance biases
    return GenerativeNet(Mlp(sizes, params))


class TestDecoderLoglik:
    def test_finite_for_all_symbols(self):
        gen = init_generative(np.random.default_rng(0))
        y = np.array([0.4, -1.2])
        for s in range(1, 17):
            assert math.isfinite(decoder_loglik(gen, y, s))

    def test_constructed_exact_fit(self):
        y = np.array([0.3, -0.9])
        gen = constant_output_generative(mu=y, log_var=np.zeros(2))
        for s in range(1, 17):
            assert decoder_loglik(gen, y, s) == pytest.approx(-LOG_2PI, abs=1e-12)

    def test_matches_composition_oracle(self):
        gen = init_generative(np.random.default_rng(1))
        rng = np.random.default_rng(2)
        from ssl_channel_lab.nnkit import forward

        for _ in range(20):
            y = rng.normal(size=2) * 2
            s = int(rng.integers(1, 17))
            out, _ = forward(gen.mlp, QAM16.points[s - 1])
            expected = gaussian_loglik(y, out[:2], out[2:])
            assert decoder_loglik(gen, y, s) == pytest.approx(float(expected), abs=1e-12)

    def test_bad_symbol_rejected(self):
        gen = init_generative(np.random.default_rng(0))
        with pytest.raises(ValueError):
            decoder_loglik(gen, np.zeros(2), 0)


class TestDecoderPosterior:
    def test_uniform_when_logliks_equal(self):
        gen = constant_output_generative(mu=np.zeros(2), log_var=np.zeros(2))
        post = decoder_posterior(gen, np.array([0.5, 0.5]))
        np.testing.assert_allclose(post, 1.0 / 16.0, atol=1e-12)

    def test_saturates_on_dominant_likelihood(self):
        # exact linear channel fit with tiny variance: the true symbol's
        # log-likelihood exceeds the others by far more than 50
        a = np.array([[0.9, -0.2], [0.2, 0.9]])
        gen = linear_exact_generative(a, log_var=-8.0)
        y = a @ QAM16.points[5]
        post = decoder_posterior(gen, y)
        assert post[np.arange(16) != 5].sum() < 1e-20  # i.e. post[5] > 1 - 1e-20
        ll = decoder_logliks(gen, y)
        second = np.sort(ll)[-2]
        assert ll[5] - second > 50.0

    def test_bayes_rule_oracle(self):
        gen = init_generative(np.random.default_rng(3))
        rng = np.random.default_rng(4)
        for _ in range(10):
            y = rng.normal(size=2) * 3
            ll = np.array([decoder_loglik(gen, y, s) for s in range(1, 17)])
            prior = np.full(16, 1.0 / 16.0)
            joint = prior * np.exp(ll - ll.max())
            oracle = joint / joint.sum()
            np.testing.assert_allclose(decoder_posterior(gen, y), oracle, atol=1e-12)

    def test_simplex(self):
        gen = init_generative(np.random.default_rng(5))
        y = np.random.default_rng(6).normal(size=(40, 2)) * 3
        post = decoder_posterior(gen, y)
        np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(post >= 0)


class TestEncoderPosterior:
    def test_normalization_random_inputs(self):
        enc = init_encoder(np.random.default_rng(7))
        y = np.random.default_rng(8).normal(size=(50, 2)) * 3
        post = encoder_posterior(enc, y)
        np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)

    def test_uniform_when_logits_equal(self):
        sizes = (2, 10, 30, 30, 16)
        enc = EncoderNet(Mlp(sizes, np.zeros(param_count(sizes))))
        np.testing.assert_allclose(encoder_posterior(enc, np.ones(2)), 1.0 / 16.0, atol=1e-12)

    def test_argmax_matches_logits(self):
        from ssl_channel_lab.models import encoder_forward

        enc = init_encoder(np.random.default_rng(9))
        y = np.random.default_rng(10).normal(size=(30, 2)) * 3
        logits, _ = encoder_forward(enc, y)
        np.testing.assert_array_equal(
            encoder_posterior(enc, y).argmax(axis=1), logits.argmax(axis=1)
        )
        np.testing.assert_array_equal(decode_encoder(enc, y), logits.argmax(axis=1) + 1)

    def test_standardization_transform(self):
        mean, scale = np.array([1.0, -2.0]), np.array([2.0, 0.5])
        enc_raw = init_encoder(np.random.default_rng(11))
        enc_std = EncoderNet(enc_raw.mlp, input_mean=mean, input_scale=scale)
        y = np.array([3.0, -1.0])
        np.testing.assert_allclose(
            encoder_posterior(enc_std, y),
            encoder_posterior(enc_raw, (y - mean) / scale),
            atol=1e-14,
        )


class TestVariationalBound:
    def _random_simplex(self, rng, n):
        q = rng.gamma(1.0, size=(n, 16))
        return q / q.sum(axis=1, keepdims=True)

    def test_equality_at_exact_posterior(self):
        rng = np.random.default_rng(13)
        for seed in range(10):
            gen = init_generative(np.random.default_rng(100 + seed))
            y = rng.normal(size=2) * 3
            post = decoder_posterior(gen, y)
            gap = log_marginal(gen, y) - elbo(gen, y, post)
            assert abs(gap) < 1e-10

    def test_bound_for_random_q(self):
        gen = init_generative(np.random.default_rng(14))
        rng = np.random.default_rng(15)
        y = rng.normal(size=2) * 3
        logp = log_marginal(gen, y)
        for q in self._random_simplex(rng, 100):
            assert elbo(gen, y, q) <= logp + 1e-10

    def test_exact_posterior_maximizes_bound(self):
        # equivalently: the posterior minimizes the bound term as it enters the loss
        gen = init_generative(np.random.default_rng(16))
        rng = np.random.default_rng(17)
        y = rng.normal(size=2) * 3
        best = elbo(gen, y, decoder_posterior(gen, y))
        for q in self._random_simplex(rng, 100):
            assert elbo(gen, y, q) <= best + 1e-10

    def test_bound_handles_zero_entries(self):
        gen = init_generative(np.random.default_rng(18))
        q = np.zeros(16)
        q[3] = 1.0
        val = elbo(gen, np.array([0.1, 0.2]), q)
        assert math.isfinite(float(val))


class TestExactLinearFit:
    def test_linear_net_reproduces_true_channel(self):
        p = ChannelParams.for_snr(0.1, 0.15, (0.8, -0.5), snr_db=18.0)
        from ssl_channel_lab.channel import complex_multiply, imbalance_matrix

        hm = np.array([[p.h[0], -p.h[1]], [p.h[1], p.h[0]]])
        a = hm @ imbalance_matrix(p.epsilon, p.delta)
        gen = linear_exact_generative(a, log_var=-6.0)
        from ssl_channel_lab.nnkit import forward

        out, _ = forward(gen.mlp, QAM16.points)
        np.testing.assert_allclose(out[:, :2], channel_images(p), atol=1e-12)
        np.testing.assert_allclose(
            channel_images(p),
            complex_multiply(p.h, (imbalance_matrix(p.epsilon, p.delta) @ QAM16.points.T).T),
            atol=1e-12,
        )

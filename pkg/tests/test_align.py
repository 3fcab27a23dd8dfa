"""Adversarial machinery: reversal, discriminators, analytic BCE values."""

import numpy as np
import pytest

from pointadapt import autodiff as ad
from pointadapt.align import (
    Discriminator,
    eta_schedule,
    loss_domain_token,
    loss_token_wise,
)
from pointadapt.autodiff import grad_reverse

LN2 = float(np.log(2.0))


def const_disc(value):
    """A stub discriminator emitting a fixed probability everywhere."""

    def disc(tokens):
        shape = tokens.shape[:-1] + (1,)
        return ad.Tensor(np.broadcast_to(np.asarray(value, float), shape).copy())

    return disc


def mixed_disc(values):
    values = np.asarray(values, dtype=np.float64)

    def disc(tokens):
        return ad.Tensor(values.reshape(tokens.shape[:-1] + (1,)))

    return disc


class TestGradientReverse:
    def test_forward_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        out = grad_reverse(ad.Tensor(x), 0.5)
        assert np.array_equal(out.value, x)

    def test_backward_negates(self):
        p = ad.parameter(np.ones(4))
        ad.sum_(grad_reverse(p, 1.0)).backward()
        np.testing.assert_array_equal(p.grad, -np.ones(4))

    def test_backward_eta_zero_kills_gradient(self):
        p = ad.parameter(np.ones(4))
        ad.sum_(grad_reverse(p, 0.0)).backward()
        assert np.all(p.grad == 0.0)


class TestAnalyticValues:
    def test_half_probability_gives_ln2(self):
        tokens = ad.Tensor(np.zeros((3, 8)))
        loss = loss_domain_token(const_disc(0.5), tokens, np.array([0, 1, 1]))
        assert loss.item() == pytest.approx(LN2, abs=1e-9)

    def test_confident_correct_gives_zero(self):
        tokens = ad.Tensor(np.zeros((2, 8)))
        loss = loss_domain_token(const_disc(1.0 - 1e-9), tokens, np.array([1, 1]))
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_batch_mean(self):
        tokens = ad.Tensor(np.zeros((2, 8)))
        loss = loss_domain_token(const_disc(0.5), tokens, np.array([0, 1]))
        assert loss.item() == pytest.approx(LN2, abs=1e-12)

    def test_token_wise_half_gives_ln2(self):
        tokens = ad.Tensor(np.zeros((2, 5, 8)))
        loss = loss_token_wise(const_disc(0.5), tokens, np.array([0, 1]))
        assert loss.item() == pytest.approx(LN2, abs=1e-9)

    def test_token_wise_single_token_reduces_to_domain_loss(self):
        rng = np.random.default_rng(1)
        disc = Discriminator(8, rng, identity="enc_k")
        vec = rng.normal(size=(3, 8))
        lam = np.array([0, 1, 0])
        a = loss_token_wise(disc, ad.Tensor(vec[:, None, :]), lam)
        b = loss_domain_token(disc, ad.Tensor(vec), lam)
        assert a.item() == pytest.approx(b.item(), abs=1e-12)

    def test_token_wise_mixed_probabilities(self):
        tokens = ad.Tensor(np.zeros((1, 2, 8)))
        loss = loss_token_wise(mixed_disc([[0.5, 0.25]]), tokens, np.array([1]))
        expected = (np.log(2.0) + np.log(4.0)) / 2.0
        assert loss.item() == pytest.approx(expected, abs=1e-9)


class TestDiscriminator:
    def test_output_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(5)
        disc = Discriminator(8, rng)
        # drive logits to extremes to exercise the clamp
        for layer in disc.net.layers:
            layer.w.value *= 100.0
        x = ad.Tensor(rng.normal(size=(64, 8)) * 100.0)
        p = disc(x).value
        assert np.all(p >= 1e-7) and np.all(p <= 1.0 - 1e-7)

    def test_no_nonfinite_log_terms(self):
        rng = np.random.default_rng(6)
        disc = Discriminator(8, rng)
        for layer in disc.net.layers:
            layer.w.value *= 1000.0
        x = ad.Tensor(rng.normal(size=(16, 8)) * 1000.0)
        loss = loss_domain_token(disc, x, np.ones(16))
        assert np.isfinite(loss.item())

    def test_gradient_check(self):
        rng = np.random.default_rng(7)
        disc = Discriminator(8, rng, identity="dec_k")
        x = rng.normal(size=(4, 3, 8))
        lam = np.array([0.0, 1.0, 1.0, 0.0])

        def loss():
            return loss_token_wise(disc, ad.Tensor(x), lam)

        report = ad.check_gradients(loss, disc.params())
        assert max(report.values()) <= 0.0, report


class TestAdversarialCoupling:
    """Sign correctness on a 2D two-cluster toy."""

    @staticmethod
    def _toy():
        rng = np.random.default_rng(42)
        feats = np.concatenate(
            [rng.normal(-1.0, 0.3, size=(32, 2)), rng.normal(1.0, 0.3, size=(32, 2))]
        )
        lam = np.concatenate([np.zeros(32), np.ones(32)])
        disc = Discriminator(2, np.random.default_rng(3))
        return feats, lam, disc

    def test_discriminator_step_decreases_bce(self):
        feats, lam, disc = self._toy()
        params = disc.params()

        def bce():
            return loss_domain_token(disc, ad.Tensor(feats), lam)

        before = bce()
        before.backward()
        for p in params.values():
            p.value -= 0.5 * p.grad
            p.grad = None
        after = bce()
        assert after.item() < before.item()

    def test_reversed_feature_gradient_moves_toward_confusion(self):
        feats, lam, disc = self._toy()
        eta = 1.0

        def run(with_grl):
            p = ad.parameter(feats.copy())
            x = grad_reverse(p, eta) if with_grl else ad.mul(p, 1.0)
            loss_domain_token(disc, x, lam).backward()
            return p.grad

        g_plain = run(with_grl=False)       # direction of steepest BCE increase
        g_grl = run(with_grl=True)
        descent = -g_grl                    # what a gradient-descent step applies
        assert float((descent * g_plain).sum()) > 0.0

    def test_eta_zero_zeroes_feature_side(self):
        feats, lam, disc = self._toy()
        p = ad.parameter(feats.copy())
        loss_domain_token(disc, grad_reverse(p, 0.0), lam).backward()
        assert np.all(p.grad == 0.0)
        # discriminator itself still learns
        assert any(np.any(t.grad != 0.0) for t in disc.params().values())


class TestEtaSchedule:
    def test_warmup_then_flat(self):
        total = 100
        assert eta_schedule(0, total, 1.0, 0.2) == 0.0
        assert eta_schedule(10, total, 1.0, 0.2) == pytest.approx(0.5)
        assert eta_schedule(20, total, 1.0, 0.2) == pytest.approx(1.0)
        assert eta_schedule(90, total, 1.0, 0.2) == pytest.approx(1.0)

    def test_scaled_maximum(self):
        assert eta_schedule(50, 100, 0.3, 0.2) == pytest.approx(0.3)

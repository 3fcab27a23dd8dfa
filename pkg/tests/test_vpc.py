"""Layer voting, consistency scoring, thresholded pseudo-labels."""

import numpy as np
import pytest

from pointadapt import autodiff as ad
from pointadapt.errors import ConfigError, InvalidInputError
from pointadapt.heads import PredictionSet
from pointadapt.vpc import (
    PseudoLabelStore,
    consistency_loss,
    consistency_scores,
    harvest_pseudo_labels,
    pseudo_label_loss,
    update_threshold,
    vote_mean,
)

from oracles import chamfer_oracle


def build_pred(per_layer, final=None):
    layers = [ad.as_tensor(p) for p in per_layer]
    voted = vote_mean(layers)
    return PredictionSet(
        coarse=layers[0],
        per_layer=layers,
        voted_mean=voted,
        final=ad.as_tensor(final) if final is not None else layers[0],
    )


class TestVoteMean:
    def test_single_layer_identity(self):
        cloud = np.random.default_rng(0).normal(size=(1, 5, 3))
        assert np.array_equal(vote_mean([cloud]).value, cloud)

    def test_two_point_mean(self):
        a = np.array([[[0.0, 0.0, 0.0]]])
        b = np.array([[[2.0, 0.0, 0.0]]])
        np.testing.assert_array_equal(vote_mean([a, b]).value, [[[1.0, 0.0, 0.0]]])

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        layers = [rng.normal(size=(1, 6, 3)) for _ in range(3)]
        perm = rng.permutation(6)
        base = vote_mean(layers).value
        permuted = vote_mean([l[:, perm] for l in layers]).value
        np.testing.assert_allclose(permuted, base[:, perm], atol=1e-15)

    def test_cardinality_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            vote_mean([np.zeros((1, 4, 3)), np.zeros((1, 5, 3))])
        with pytest.raises(InvalidInputError):
            vote_mean([])

    def test_least_squares_property(self):
        # the vote minimizes the total squared slot-wise deviation
        rng = np.random.default_rng(2)
        layers = [rng.normal(size=(1, 4, 3)) for _ in range(3)]
        mean = vote_mean(layers).value

        def objective(m):
            return sum(((m - l) ** 2).sum() for l in layers)

        base = objective(mean)
        for _ in range(25):
            delta = rng.normal(size=mean.shape) * rng.uniform(1e-3, 0.5)
            assert objective(mean + delta) >= base - 1e-12


class TestConsistency:
    def test_identical_layers_zero(self):
        cloud = np.random.default_rng(3).normal(size=(2, 6, 3))
        pred = build_pred([cloud, cloud.copy(), cloud.copy()])
        assert consistency_loss(pred).item() <= 1e-12

    def test_two_layer_single_point_example(self):
        # layers at (0,0,0) and (2,0,0): vote (1,0,0); CD(vote, layer) = 2 each
        a = np.array([[[0.0, 0.0, 0.0]]])
        b = np.array([[[2.0, 0.0, 0.0]]])
        pred = build_pred([a, b])
        assert consistency_loss(pred).item() == pytest.approx(2.0, abs=1e-9)
        # cross-checked against the exhaustive oracle
        vote = np.array([[1.0, 0.0, 0.0]])
        expected = 0.5 * (chamfer_oracle(vote, a[0]) + chamfer_oracle(vote, b[0]))
        assert consistency_loss(pred).item() == pytest.approx(expected, abs=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        layers = [rng.normal(size=(1, 5, 3)) for _ in range(3)]
        t = np.array([3.0, -1.0, 0.5])
        a = consistency_loss(build_pred(layers)).item()
        b = consistency_loss(build_pred([l + t for l in layers])).item()
        assert b == pytest.approx(a, abs=1e-9)

    def test_per_sample_scores_shape(self):
        rng = np.random.default_rng(5)
        layers = [rng.normal(size=(4, 5, 3)) for _ in range(2)]
        scores = consistency_scores(build_pred(layers))
        assert scores.shape == (4,)
        assert np.all(scores.value >= 0.0)

    def test_gradient_flows(self):
        rng = np.random.default_rng(6)
        p = ad.parameter(rng.normal(size=(1, 4, 3)))
        q = ad.parameter(rng.normal(size=(1, 4, 3)))

        def loss():
            return consistency_loss(build_pred([p, q]))

        report = ad.check_gradients(loss, {"a": p, "b": q})
        assert max(report.values()) <= 0.0


class TestThreshold:
    def test_median(self):
        assert update_threshold([0.1, 0.5, 0.9], 50) == pytest.approx(0.5)

    def test_equal_scores(self):
        assert update_threshold([0.3, 0.3, 0.3], 30) == pytest.approx(0.3)

    def test_zero_percentile_is_min(self):
        assert update_threshold([0.4, 0.2, 0.9], 0) == pytest.approx(0.2)

    def test_empty_window_rejected(self):
        with pytest.raises(ConfigError):
            update_threshold([], 30)


class TestHarvest:
    def test_counts_match_threshold_arithmetic(self):
        store = PseudoLabelStore()
        ids = ["a", "b", "c"]
        scores = [0.1, 0.5, 0.9]
        finals = np.random.default_rng(7).normal(size=(3, 8, 3))
        n = harvest_pseudo_labels(ids, scores, finals, tau=0.5, store=store)
        assert n == 2
        assert "a" in store and "b" in store and "c" not in store

    def test_no_harvest_below_all(self):
        store = PseudoLabelStore()
        finals = np.zeros((3, 4, 3))
        n = harvest_pseudo_labels(["a", "b", "c"], [0.2, 0.3, 0.4], finals, 0.1, store)
        assert n == 0 and len(store) == 0

    def test_reharvest_overwrites(self):
        store = PseudoLabelStore()
        first = np.ones((1, 4, 3))
        second = 2 * np.ones((1, 4, 3))
        harvest_pseudo_labels(["a"], [0.1], first, 0.5, store, epoch=0)
        harvest_pseudo_labels(["a"], [0.05], second, 0.5, store, epoch=1)
        assert len(store) == 1
        entry = store.get("a")
        assert np.array_equal(entry.cloud, second[0])
        assert entry.epoch == 1

    def test_random_sweep_counts(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            scores = rng.uniform(size=10)
            tau = float(rng.uniform())
            store = PseudoLabelStore()
            ids = [f"s{i}" for i in range(10)]
            n = harvest_pseudo_labels(ids, scores, np.zeros((10, 2, 3)), tau, store)
            assert n == int((scores <= tau).sum()) == len(store)


class TestPseudoLoss:
    def test_prediction_equals_label_zero(self):
        store = PseudoLabelStore()
        cloud = np.random.default_rng(9).normal(size=(1, 6, 3))
        harvest_pseudo_labels(["a"], [0.0], cloud, 1.0, store)
        loss = pseudo_label_loss(["a"], ad.Tensor(cloud), store)
        assert loss.item() <= 1e-12

    def test_single_point_matches_oracle(self):
        store = PseudoLabelStore()
        label = np.array([[[1.0, 0.0, 0.0]]])
        pred = np.array([[[0.0, 0.0, 0.0]]])
        harvest_pseudo_labels(["a"], [0.0], label, 1.0, store)
        loss = pseudo_label_loss(["a"], ad.Tensor(pred), store)
        assert loss.item() == pytest.approx(chamfer_oracle(pred[0], label[0]), abs=1e-12)

    def test_absent_sample_contributes_zero(self):
        store = PseudoLabelStore()
        loss = pseudo_label_loss(["missing"], ad.Tensor(np.zeros((1, 4, 3))), store)
        assert loss.item() == 0.0

    def test_gradient_never_flows_into_labels(self):
        store = PseudoLabelStore()
        label = np.random.default_rng(10).normal(size=(1, 5, 3))
        harvest_pseudo_labels(["a"], [0.0], label, 1.0, store)
        p = ad.parameter(np.random.default_rng(11).normal(size=(1, 5, 3)))
        loss = pseudo_label_loss(["a"], p, store)
        loss.backward()
        assert p.grad is not None
        # the stored label is a detached numpy array: mutating the parameter
        # afterwards cannot change it
        before = store.get("a").cloud.copy()
        p.value += 1.0
        assert np.array_equal(store.get("a").cloud, before)

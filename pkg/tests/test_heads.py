"""Prediction heads: per-layer offsets, both refiners, completion loss."""

import numpy as np
import pytest

from pointadapt import autodiff as ad, geometry as geo
from pointadapt.diffops import chamfer_squared
from pointadapt.errors import InvalidInputError
from pointadapt.heads import (
    FoldRefiner,
    PerLayerPointHead,
    PredictionSet,
    SplitRefiner,
    completion_loss,
    make_refiner,
)
from pointadapt.seq2seq import DecoderOutput
from pointadapt.vpc import vote_mean

from oracles import chamfer_oracle

D = 8
N = 4


@pytest.fixture
def rng():
    return np.random.default_rng(31)


def toy_decoder_output(rng, layers=2, b=1):
    return DecoderOutput(
        query_out=ad.Tensor(rng.normal(size=(b, D))),
        dynamic_out=[ad.Tensor(rng.normal(size=(b, N, D))) for _ in range(layers)],
    )


def build_pred(coarse, per_layer, final):
    return PredictionSet(
        coarse=coarse, per_layer=per_layer, voted_mean=vote_mean(per_layer), final=final
    )


class TestPerLayerHead:
    def test_zero_offsets_reproduce_coarse(self, rng):
        head = PerLayerPointHead(D, rng)
        last = head.offset.layers[-1]
        last.w.value[:] = 0.0
        last.b.value[:] = 0.0
        coarse = ad.Tensor(rng.normal(size=(1, N, 3)))
        preds = head(toy_decoder_output(rng), coarse)
        for p in preds:
            np.testing.assert_array_equal(p.value, coarse.value)

    def test_explicit_offsets(self, rng):
        # two layers pushing a single origin point to -x and +x
        coarse = ad.Tensor(np.zeros((1, 1, 3)))
        layers = [
            ad.add(coarse, np.array([-1.0, 0.0, 0.0])),
            ad.add(coarse, np.array([1.0, 0.0, 0.0])),
        ]
        assert np.array_equal(layers[0].value[0], [[-1.0, 0.0, 0.0]])
        assert np.array_equal(layers[1].value[0], [[1.0, 0.0, 0.0]])

    def test_shapes(self, rng):
        head = PerLayerPointHead(D, rng)
        coarse = ad.Tensor(rng.normal(size=(2, N, 3)))
        preds = head(toy_decoder_output(rng, layers=3, b=2), coarse)
        assert len(preds) == 3
        for p in preds:
            assert p.shape == (2, N, 3)

    def test_slot_correspondence_under_permutation(self, rng):
        head = PerLayerPointHead(D, rng)
        dec = toy_decoder_output(rng, layers=2)
        coarse = ad.Tensor(rng.normal(size=(1, N, 3)))
        base = [p.value.copy() for p in head(dec, coarse)]
        perm = np.array([2, 0, 3, 1])
        dec_p = DecoderOutput(
            query_out=dec.query_out,
            dynamic_out=[ad.Tensor(t.value[:, perm]) for t in dec.dynamic_out],
        )
        coarse_p = ad.Tensor(coarse.value[:, perm])
        permuted = head(dec_p, coarse_p)
        for b, p in zip(base, permuted):
            np.testing.assert_allclose(p.value, b[:, perm], atol=1e-12)


class TestRefiners:
    @pytest.mark.parametrize("kind", ["fold", "spd"])
    def test_shapes(self, rng, kind):
        refiner = make_refiner(kind, D, 8, rng)
        tokens = ad.Tensor(rng.normal(size=(1, 64, D)))
        coarse = ad.Tensor(rng.normal(size=(1, 64, 3)))
        assert refiner(tokens, coarse).shape == (1, 512, 3)

    def test_fold_zero_learned_map_upfactor_one(self, rng):
        refiner = FoldRefiner(D, 1, rng)
        last = refiner.fold.layers[-1]
        last.w.value[:] = 0.0
        last.b.value[:] = 0.0
        tokens = ad.Tensor(rng.normal(size=(1, N, D)))
        coarse = ad.Tensor(rng.normal(size=(1, N, 3)))
        np.testing.assert_array_equal(refiner(tokens, coarse).value, coarse.value)

    def test_spd_zero_displacement_children_coincide(self, rng):
        refiner = SplitRefiner(D, 4, rng)
        last = refiner.split.layers[-1]
        last.w.value[:] = 0.0
        last.b.value[:] = 0.0
        tokens = ad.Tensor(rng.normal(size=(1, N, D)))
        coarse = ad.Tensor(rng.normal(size=(1, N, 3)))
        dense = refiner(tokens, coarse).value.reshape(1, N, 4, 3)
        for j in range(N):
            for child in range(4):
                np.testing.assert_array_equal(dense[0, j, child], coarse.value[0, j])

    def test_spd_children_distinct_generically(self, rng):
        refiner = SplitRefiner(D, 4, rng)
        tokens = ad.Tensor(rng.normal(size=(1, N, D)))
        coarse = ad.Tensor(rng.normal(size=(1, N, 3)))
        dense = refiner(tokens, coarse).value.reshape(N, 4, 3)
        for j in range(N):
            assert len({tuple(p) for p in dense[j]}) == 4

    def test_interchangeable_interface(self, rng):
        tokens = ad.Tensor(rng.normal(size=(1, N, D)))
        coarse = ad.Tensor(rng.normal(size=(1, N, 3)))
        a = make_refiner("fold", D, 4, rng)(tokens, coarse)
        b = make_refiner("spd", D, 4, rng)(tokens, coarse)
        assert a.shape == b.shape
        assert not np.array_equal(a.value, b.value)

    def test_invalid_kind_and_factor(self, rng):
        with pytest.raises(InvalidInputError):
            make_refiner("voxel", D, 4, rng)
        with pytest.raises(InvalidInputError):
            FoldRefiner(D, 0, rng)

    @pytest.mark.parametrize("kind", ["fold", "spd"])
    def test_gradient_check(self, rng, kind):
        refiner = make_refiner(kind, D, 2, rng)
        tokens_v = rng.normal(size=(1, N, D))
        coarse_v = rng.normal(size=(1, N, 3))
        probe = rng.normal(size=(1, N * 2, 3))

        def loss():
            dense = refiner(ad.Tensor(tokens_v), ad.Tensor(coarse_v))
            return ad.mean_(ad.mul(ad.power(dense, 2.0), probe))

        report = ad.check_gradients(loss, refiner.params())
        assert max(report.values()) <= 0.0, report


class TestCompletionLoss:
    def test_perfect_prediction_zero(self, rng):
        gt = rng.normal(size=(1, 16, 3))
        n = 4
        idx = geo.farthest_point_sample(gt[0], n, geo.lexicographic_min_index(gt[0]))
        coarse = ad.Tensor(gt[:, idx][0][None])
        layers = [coarse]
        pred = build_pred(coarse, layers, ad.Tensor(gt))
        assert completion_loss(pred, gt).item() == pytest.approx(0.0, abs=1e-12)

    def test_single_point_matches_oracle(self, rng):
        coarse_pt = np.array([[[0.0, 1.0, 0.0]]])
        gt = np.array([[[1.0, 1.0, 0.0]]])
        pred = build_pred(
            ad.Tensor(coarse_pt), [ad.Tensor(coarse_pt)], ad.Tensor(coarse_pt)
        )
        expected = chamfer_oracle(coarse_pt[0], gt[0]) + chamfer_oracle(coarse_pt[0], gt[0])
        assert completion_loss(pred, gt).item() == pytest.approx(expected, abs=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(10):
            coarse = ad.Tensor(rng.normal(size=(2, N, 3)))
            final = ad.Tensor(rng.normal(size=(2, N * 2, 3)))
            pred = build_pred(coarse, [coarse], final)
            gt = rng.normal(size=(2, 12, 3))
            assert completion_loss(pred, gt).item() >= 0.0

    def test_gradient_reaches_prediction(self, rng):
        coarse_v = rng.normal(size=(1, N, 3))
        p = ad.parameter(coarse_v)
        gt = rng.normal(size=(1, 12, 3))

        def loss():
            pred = build_pred(p, [p], ad.mul(p, 1.0))
            return completion_loss(pred, gt)

        report = ad.check_gradients(loss, {"coarse": p})
        assert max(report.values()) <= 0.0


class TestDiffChamferAgreesWithGeometry:
    def test_random_pairs(self, rng):
        for _ in range(20):
            a = rng.normal(size=(1, int(rng.integers(1, 20)), 3))
            b = rng.normal(size=(1, int(rng.integers(1, 20)), 3))
            got = chamfer_squared(ad.Tensor(a), ad.Tensor(b)).value[0]
            want = geo.chamfer_distance(a[0], b[0]).raw
            assert got == pytest.approx(want, abs=1e-12)

    def test_identical_clouds_near_zero(self, rng):
        a = rng.normal(size=(1, 10, 3))
        assert chamfer_squared(ad.Tensor(a), ad.Tensor(a)).value[0] <= 1e-12

"""Proxy extraction: shapes, invariances, and gradient verification."""

import numpy as np
import pytest

from pointadapt import autodiff as ad
from pointadapt.backbone import ProxyExtractor, TokenSequence
from pointadapt.errors import InvalidInputError


def toy_extractor(relative_only=True, seed=0):
    return ProxyExtractor(
        n_proxies=4, embed_dim=8, knn_k=2,
        rng=np.random.default_rng(seed), relative_only=relative_only,
    )


@pytest.fixture
def cloud8():
    return np.random.default_rng(17).normal(size=(1, 8, 3))


def test_output_shapes(cloud8):
    seq = toy_extractor()(cloud8)
    assert seq.tokens.shape == (1, 4, 8)
    assert seq.positions.shape == (1, 4, 8)
    assert seq.centers.shape == (1, 4, 3)


def test_shape_check_larger():
    pts = np.random.default_rng(0).normal(size=(2, 256, 3))
    ext = ProxyExtractor(64, 128, 8, np.random.default_rng(1))
    seq = ext(pts)
    assert seq.tokens.shape == (2, 64, 128)
    assert seq.positions.shape == (2, 64, 128)


def test_proxy_count_independent_of_input_size():
    ext = toy_extractor()
    for n in (8, 20, 50):
        pts = np.random.default_rng(n).normal(size=(1, n, 3))
        assert ext(pts).tokens.shape == (1, 4, 8)


def test_all_points_as_centers():
    pts = np.random.default_rng(3).normal(size=(1, 4, 3))
    ext = ProxyExtractor(4, 8, 1, np.random.default_rng(0))
    seq = ext(pts)
    assert {tuple(c) for c in seq.centers[0]} == {tuple(p) for p in pts[0]}


def test_too_few_points_rejected(cloud8):
    ext = ProxyExtractor(16, 8, 2, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        ext(cloud8)
    ext2 = ProxyExtractor(4, 8, 9, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        ext2(cloud8)


def test_translation_moves_centers_not_tokens(cloud8):
    ext = toy_extractor(relative_only=True)
    t = np.array([0.5, -0.25, 1.5])
    seq_a = ext(cloud8)
    seq_b = ext(cloud8 + t)
    np.testing.assert_allclose(seq_b.centers - seq_a.centers, np.broadcast_to(t, seq_a.centers.shape), atol=1e-9)
    np.testing.assert_allclose(seq_b.tokens.value, seq_a.tokens.value, atol=1e-9)
    # positions see absolute coordinates, so they must differ
    assert not np.allclose(seq_b.positions.value, seq_a.positions.value, atol=1e-9)


def test_absolute_features_break_translation_invariance(cloud8):
    ext = toy_extractor(relative_only=False)
    seq_a = ext(cloud8)
    seq_b = ext(cloud8 + np.array([0.5, 0.0, 0.0]))
    assert not np.allclose(seq_b.tokens.value, seq_a.tokens.value, atol=1e-9)


def test_permutation_invariance(cloud8):
    ext = toy_extractor()
    rng = np.random.default_rng(5)
    perm = rng.permutation(8)
    seq_a = ext(cloud8)
    seq_b = ext(cloud8[:, perm, :])
    # FPS is seeded by coordinates, so the center sequences coincide exactly
    assert np.array_equal(seq_a.centers, seq_b.centers)
    assert np.array_equal(seq_a.tokens.value, seq_b.tokens.value)
    assert np.array_equal(seq_a.positions.value, seq_b.positions.value)


def test_gradient_check_all_backbone_params(cloud8):
    ext = toy_extractor()
    probe = np.random.default_rng(23).normal(size=(1, 4, 8))

    def loss():
        seq = ext(cloud8)
        return ad.mean_(
            ad.add(
                ad.power(ad.mul(seq.tokens, probe), 2.0),
                ad.power(seq.positions, 2.0),
            )
        )

    report = ad.check_gradients(loss, ext.params())
    worst = max(report.values())
    assert worst <= 0.0, f"backbone gradient mismatch: {report}"


def test_token_sequence_validation():
    good = ad.Tensor(np.zeros((1, 4, 8)))
    with pytest.raises(InvalidInputError):
        TokenSequence(good, ad.Tensor(np.zeros((1, 4, 4))), np.zeros((1, 4, 3)))
    with pytest.raises(InvalidInputError):
        TokenSequence(
            ad.Tensor(np.full((1, 4, 8), np.nan)), good, np.zeros((1, 4, 3))
        )

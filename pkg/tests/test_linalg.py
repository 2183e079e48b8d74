import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trqann.linalg import (
    orthogonality_error,
    pairwise_sq_dist,
    procrustes_rotation,
    random_orthogonal,
    svd,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def naive_sq_dist(a, b):
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            for d in range(a.shape[1]):
                out[i, j] += (a[i, d] - b[j, d]) ** 2
    return out


class TestPairwiseSqDist:
    def test_identity_case(self):
        v = np.array([[1.5, -2.0, 3.0]])
        assert pairwise_sq_dist(v, v).tolist() == [[0.0]]

    def test_three_four_five(self):
        assert pairwise_sq_dist([[0.0, 0.0]], [[3.0, 4.0]]).tolist() == [[25.0]]

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(pairwise_sq_dist(a, b), naive_sq_dist(a, b), rtol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 4\)"):
            pairwise_sq_dist(np.zeros((2, 3)), np.zeros((2, 4)))

    @given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (6, 3), elements=finite))
    def test_swap_symmetry_and_nonnegative(self, a, b):
        d = pairwise_sq_dist(a, b)
        assert np.all(d >= 0)
        np.testing.assert_allclose(d, pairwise_sq_dist(b, a).T, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
class TestSvd:
    def test_identity(self, method):
        _, s, _ = svd(np.eye(3), method=method)
        np.testing.assert_allclose(s, [1, 1, 1], atol=1e-14)

    def test_diagonal(self, method):
        _, s, _ = svd(np.diag([3.0, 2.0, 1.0]), method=method)
        np.testing.assert_allclose(s, [3, 2, 1], atol=1e-14)

    @pytest.mark.parametrize("shape", [(6, 4), (4, 6), (8, 8)])
    def test_reconstruction(self, method, shape):
        m = np.random.default_rng(1).normal(size=shape)
        u, s, vt = svd(m, method=method)
        rel = np.linalg.norm(u @ np.diag(s) @ vt - m) / np.linalg.norm(m)
        assert rel <= 1e-8
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
        assert np.linalg.norm(u.T @ u - np.eye(u.shape[1])) <= 1e-8
        assert np.linalg.norm(vt @ vt.T - np.eye(vt.shape[0])) <= 1e-8

    def test_rank_deficient(self, method):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 5))
        u, s, vt = svd(m, method=method)
        np.testing.assert_allclose(u @ np.diag(s) @ vt, m, atol=1e-10)
        assert np.linalg.norm(u.T @ u - np.eye(u.shape[1])) <= 1e-8
        assert np.all(s[2:] < 1e-10)

    def test_rejects_non_finite(self, method):
        with pytest.raises(ValueError):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]), method=method)


def test_jacobi_agrees_with_lapack_singular_values():
    m = np.random.default_rng(5).normal(size=(9, 7))
    np.testing.assert_allclose(svd(m, "jacobi")[1], svd(m, "lapack")[1], rtol=1e-12)


class TestProcrustes:
    def test_same_sets_give_identity(self):
        x = np.random.default_rng(0).normal(size=(20, 4))
        np.testing.assert_allclose(procrustes_rotation(x, x), np.eye(4), atol=1e-12)

    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    def test_recovers_known_rotation(self, method):
        rng = np.random.default_rng(11)
        r = random_orthogonal(5, rng)
        source = rng.normal(size=(30, 5))
        target = source @ r.T
        np.testing.assert_allclose(procrustes_rotation(source, target, method), r, atol=1e-8)

    def test_beats_random_orthogonal_candidates(self):
        rng = np.random.default_rng(12)
        source, target = rng.normal(size=(50, 4)), rng.normal(size=(50, 4))
        w = procrustes_rotation(source, target)
        best = np.linalg.norm(w @ source.T - target.T)
        sampled = min(
            np.linalg.norm(random_orthogonal(4, rng) @ source.T - target.T) for _ in range(1000)
        )
        assert best <= sampled

    def test_result_is_orthogonal(self):
        rng = np.random.default_rng(13)
        w = procrustes_rotation(rng.normal(size=(7, 6)), rng.normal(size=(7, 6)))
        assert orthogonality_error(w) <= 1e-6
        assert abs(abs(np.linalg.det(w)) - 1) <= 1e-6

    def test_empty_gives_identity(self):
        np.testing.assert_array_equal(procrustes_rotation(np.zeros((0, 3)), np.zeros((0, 3))),
                                      np.eye(3))

    def test_reflection_allowed(self):
        x = np.random.default_rng(4).normal(size=(10, 3))
        flip = np.diag([1.0, 1.0, -1.0])
        w = procrustes_rotation(x, x @ flip)
        np.testing.assert_allclose(w, flip, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            procrustes_rotation(np.zeros((3, 2)), np.zeros((4, 2)))


@settings(max_examples=30)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_orthogonal_maps_preserve_total_energy(dim, seed):
    rng = np.random.default_rng(seed)
    t = random_orthogonal(dim, rng)
    x = rng.normal(size=(25, dim))
    assert orthogonality_error(t) <= 1e-6
    np.testing.assert_allclose(np.sum((x @ t.T) ** 2), np.sum(x ** 2), rtol=1e-8)

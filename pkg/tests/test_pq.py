import numpy as np
import pytest

from trqann.linalg import orthogonality_error, pairwise_sq_dist, random_orthogonal
from trqann.pq import (
    ProductCodebook,
    adc_distance,
    adc_table,
    decode_pq,
    encode_pq,
    pq_mse,
    split_dims,
    train_opq,
    train_pq,
)
from trqann.vq import assign, mse, nearest, train_kmeans


@pytest.fixture
def data():
    return np.random.default_rng(0).normal(size=(200, 8))


@pytest.fixture
def known_pcb():
    rng = np.random.default_rng(1)
    return ProductCodebook([rng.normal(size=(10, 3)), rng.normal(size=(10, 2))])


def test_split_dims_remainder_to_leading_groups():
    assert split_dims(10, 3) == [4, 3, 3]
    assert split_dims(8, 8) == [1] * 8
    with pytest.raises(ValueError):
        split_dims(4, 5)


class TestTrainPq:
    def test_m1_is_kmeans(self, data):
        pcb = train_pq(data, 1, 4, seed=5)
        cb, labels, err = train_kmeans(data, 4, seed=5)
        assert pcb.sub_codebooks[0].tobytes() == cb.centroids.tobytes()
        assert pq_mse(data, pcb) == err

    def test_block_constant_groups_give_zero_mse(self):
        rng = np.random.default_rng(2)
        left = rng.integers(3, size=100)
        right = rng.integers(3, size=100)
        x = np.column_stack([left, left * 2.0, right, right - 1.0])
        pcb = train_pq(x, 2, 3, seed=0)
        assert pq_mse(x, pcb) == 0.0

    def test_group_mses_sum_to_total(self, data):
        pcb = train_pq(data, 2, 4, seed=3)
        codes = encode_pq(data, pcb)
        per_group = sum(
            mse(data[:, sl], c, codes[:, g]) for g, (sl, c) in enumerate(zip(pcb.slices, pcb.sub_codebooks))
        )
        recon = decode_pq(codes, pcb)
        full = np.mean(np.sum((data - recon) ** 2, axis=1))
        np.testing.assert_allclose(per_group, full, rtol=1e-10)

    def test_m_larger_than_dim_rejected(self):
        with pytest.raises(ValueError):
            train_pq(np.zeros((10, 3)), 4, 2)

    def test_codes_in_range(self, data):
        pcb = train_pq(data, 4, 16, seed=0)
        codes = encode_pq(data, pcb)
        assert codes.min() >= 0 and codes.max() < 16


class TestEncodeDecode:
    def test_concatenated_centroids_encode(self, known_pcb):
        x = np.concatenate([known_pcb.sub_codebooks[0][3], known_pcb.sub_codebooks[1][7]])
        assert encode_pq(x[None], known_pcb).tolist() == [[3, 7]]

    def test_m1_equals_assign(self, data):
        pcb = train_pq(data, 1, 6, seed=0)
        np.testing.assert_array_equal(encode_pq(data, pcb)[:, 0], assign(data, pcb.sub_codebooks[0]))

    def test_brute_force_per_group(self, data, known_pcb):
        x = np.random.default_rng(3).normal(size=(40, 5))
        codes = encode_pq(x, known_pcb)
        for g, (sl, c) in enumerate(zip(known_pcb.slices, known_pcb.sub_codebooks)):
            expected = [int(np.argmin([np.sum((p[sl] - cc) ** 2) for cc in c])) for p in x]
            assert codes[:, g].tolist() == expected

    def test_decode_first_centroids(self, known_pcb):
        out = decode_pq([[0, 0]], known_pcb)
        np.testing.assert_array_equal(
            out[0], np.concatenate([known_pcb.sub_codebooks[0][0], known_pcb.sub_codebooks[1][0]])
        )

    def test_roundtrip_fixed_point(self, known_pcb):
        x = decode_pq([[4, 9]], known_pcb)
        np.testing.assert_array_equal(decode_pq(encode_pq(x, known_pcb), known_pcb), x)

    def test_decode_random_codes(self, known_pcb):
        codes = np.random.default_rng(4).integers(10, size=(20, 2))
        manual = np.array(
            [list(known_pcb.sub_codebooks[0][a]) + list(known_pcb.sub_codebooks[1][b]) for a, b in codes]
        )
        np.testing.assert_array_equal(decode_pq(codes, known_pcb), manual)

    def test_decode_out_of_range(self, known_pcb):
        with pytest.raises(ValueError):
            decode_pq([[0, 10]], known_pcb)

    def test_encode_dimension_mismatch(self, known_pcb):
        with pytest.raises(ValueError):
            encode_pq(np.zeros((2, 4)), known_pcb)


class TestAdc:
    def test_zero_at_decoded_code(self, known_pcb):
        q = decode_pq([[2, 5]], known_pcb)[0]
        t = adc_table(q, known_pcb)
        assert adc_distance(t, np.array([2, 5])) == 0.0
        assert np.all(t >= 0)

    def test_m1_table_is_distance_row(self, data):
        pcb = train_pq(data, 1, 5, seed=0)
        np.testing.assert_allclose(
            adc_table(data[0], pcb)[0], pairwise_sq_dist(data[:1], pcb.sub_codebooks[0])[0], rtol=1e-12
        )

    def test_lookup_sum_equals_distance_to_reconstruction(self, known_pcb):
        rng = np.random.default_rng(5)
        for _ in range(50):
            q = rng.normal(size=5)
            codes = rng.integers(10, size=(8, 2))
            got = adc_distance(adc_table(q, known_pcb), codes)
            want = pairwise_sq_dist(q[None], decode_pq(codes, known_pcb))[0]
            np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_query_dimension_mismatch(self, known_pcb):
        with pytest.raises(ValueError):
            adc_table(np.zeros(4), known_pcb)


class TestOpq:
    def test_zero_iterations_is_pq(self, data):
        rot, pcb = train_opq(data, 2, 4, outer_iters=0, seed=3)
        ref = train_pq(data, 2, 4, seed=3)
        np.testing.assert_array_equal(rot, np.eye(8))
        for a, b in zip(pcb.sub_codebooks, ref.sub_codebooks):
            assert a.tobytes() == b.tobytes()

    def test_frozen_rotation_is_pq(self, data):
        rot, pcb = train_opq(data, 4, 8, outer_iters=10, seed=2, freeze_rotation=True)
        ref = train_pq(data, 4, 8, seed=2)
        np.testing.assert_array_equal(rot, np.eye(8))
        for a, b in zip(pcb.sub_codebooks, ref.sub_codebooks):
            assert a.tobytes() == b.tobytes()

    def test_objective_monotone(self, data):
        trace = []
        rot, _ = train_opq(data, 2, 8, outer_iters=20, seed=0, trace=trace)
        assert len(trace) == 21
        assert np.all(np.diff(trace) <= 1e-9)
        assert orthogonality_error(rot) <= 1e-6

    def test_beats_pq_on_rotated_product_data(self):
        rng = np.random.default_rng(6)
        # two independent 2-D groups, each a 3x3 grid of tight clusters
        grid = np.array([[a, b] for a in range(3) for b in range(3)], float) * 4
        x = np.hstack([grid[rng.integers(9, size=600)], grid[rng.integers(9, size=600)]])
        x += rng.normal(scale=0.3, size=x.shape)
        x = x @ random_orthogonal(4, rng).T
        pq_err = pq_mse(x, train_pq(x, 2, 9, seed=0))
        rot, pcb = train_opq(x, 2, 9, outer_iters=20, seed=0)
        opq_err = pq_mse(x @ rot.T, pcb)
        assert opq_err <= pq_err

    def test_codebooks_live_in_rotated_space(self, data):
        rot, pcb = train_opq(data, 2, 4, outer_iters=3, seed=0)
        rotated = data @ rot.T
        codes = encode_pq(rotated, pcb)
        for g, (sl, c) in enumerate(zip(pcb.slices, pcb.sub_codebooks)):
            np.testing.assert_array_equal(codes[:, g], nearest(rotated[:, sl], c)[0])

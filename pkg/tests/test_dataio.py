import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trqann.dataio import (
    ArchiveError,
    Dataset,
    OpqModel,
    exact_knn,
    gen_synthetic,
    load_dataset,
    load_model,
    read_vecs,
    save_model,
    write_vecs,
)
from trqann.index import build_ivf_trq, build_multi_index_trq
from trqann.pq import train_opq, train_pq
from trqann.rq import train_rq
from trqann.trq import encode_trq, train_trq
from trqann.vq import train_kmeans


class TestVecs:
    def test_single_record(self, tmp_path):
        p = tmp_path / "one.fvecs"
        p.write_bytes(struct.pack("<i2f", 2, 1.5, -2.0))
        out = read_vecs(p)
        assert out.shape == (1, 2) and out.tolist() == [[1.5, -2.0]]

    def test_bvecs_fixture_independent_decode(self, tmp_path):
        rows = [[0, 255, 7], [1, 2, 3], [200, 100, 50]]
        raw = b"".join(struct.pack("<i", 3) + bytes(r) for r in rows)
        p = tmp_path / "fix.bvecs"
        p.write_bytes(raw)
        # independent decode: walk records by hand
        expect, pos = [], 0
        while pos < len(raw):
            (d,) = struct.unpack_from("<i", raw, pos)
            expect.append(list(raw[pos + 4:pos + 4 + d]))
            pos += 4 + d
        assert read_vecs(p).tolist() == expect
        write_vecs(tmp_path / "again.bvecs", read_vecs(p))
        assert (tmp_path / "again.bvecs").read_bytes() == raw

    @pytest.mark.parametrize("ext,gen", [
        (".fvecs", lambda r: r.normal(size=(13, 5)).astype(np.float32)),
        (".bvecs", lambda r: r.integers(0, 256, size=(13, 5))),
        (".ivecs", lambda r: r.integers(-2**31, 2**31, size=(13, 5))),
    ])
    def test_roundtrip_bitwise(self, tmp_path, ext, gen):
        a = gen(np.random.default_rng(0))
        p = tmp_path / f"x{ext}"
        write_vecs(p, a)
        b = read_vecs(p)
        np.testing.assert_array_equal(b, a)
        first = p.read_bytes()
        write_vecs(p, b)
        assert p.read_bytes() == first

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_fvecs_roundtrip_property(self, tmp_path_factory, a):
        p = tmp_path_factory.mktemp("h") / "a.fvecs"
        write_vecs(p, a)
        assert read_vecs(p).astype(np.float32).tobytes() == a.tobytes()

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "t.fvecs"
        p.write_bytes(struct.pack("<i3f", 3, 1, 2, 3) + struct.pack("<i2f", 3, 1, 2))
        with pytest.raises(ValueError, match="truncated"):
            read_vecs(p)

    def test_inconsistent_dimension_reports_record(self, tmp_path):
        p = tmp_path / "d.ivecs"
        p.write_bytes(struct.pack("<i2i", 2, 1, 2) * 2 + struct.pack("<i2i", 1, 7, 8))
        with pytest.raises(ValueError, match="record 2"):
            read_vecs(p)

    def test_out_of_range_bytes_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_vecs(tmp_path / "b.bvecs", [[0, 256]])
        with pytest.raises(ValueError):
            write_vecs(tmp_path / "b.bvecs", [[0.5]])
        assert not (tmp_path / "b.bvecs").exists()

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(ValueError):
            read_vecs(tmp_path / "x.txt")

    def test_load_dataset(self, tmp_path):
        rng = np.random.default_rng(1)
        base = rng.normal(size=(20, 3)).astype(np.float32)
        write_vecs(tmp_path / "b.fvecs", base)
        write_vecs(tmp_path / "q.fvecs", base[:2])
        write_vecs(tmp_path / "g.ivecs", [[0], [1]])
        ds = load_dataset(tmp_path / "b.fvecs", tmp_path / "q.fvecs", tmp_path / "g.ivecs")
        assert ds.vectors.shape == (20, 3) and ds.ground_truth.tolist() == [[0], [1]]

    def test_dataset_validates_ground_truth(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros((1, 2)), np.array([[5]]))


class TestSynthetic:
    def test_quarter_turn_axes_orthogonal(self):
        ds = gen_synthetic("rotated-clones", 4000, 2, 2, seed=3, angle=np.pi / 2)
        axes = []
        for c in range(2):
            pts = ds.vectors[ds.labels == c]
            _, vecs = np.linalg.eigh(np.cov(pts.T))
            axes.append(vecs[:, -1])
        assert abs(axes[0] @ axes[1]) < 0.05

    def test_rotated_clones_share_spectrum(self):
        ds = gen_synthetic("rotated-clones", 20000, 4, 3, seed=4)
        spectra = [np.linalg.eigvalsh(np.cov(ds.vectors[ds.labels == c].T)) for c in range(3)]
        np.testing.assert_allclose(spectra[0], spectra[1], rtol=0.15)
        np.testing.assert_allclose(spectra[0], spectra[2], rtol=0.15)

    def test_product_independent_groups_uncorrelated(self):
        ds = gen_synthetic("product-independent", 10000, 4, 5, seed=5, groups=2)
        rho = np.corrcoef(ds.vectors.T)
        assert np.max(np.abs(rho[:2, 2:])) < 0.05

    @pytest.mark.parametrize("kind", ["clustered-anisotropic", "rotated-clones", "product-independent"])
    def test_deterministic(self, kind):
        a = gen_synthetic(kind, 300, 6, 4, seed=9, n_queries=10)
        b = gen_synthetic(kind, 300, 6, 4, seed=9, n_queries=10)
        assert a.vectors.tobytes() == b.vectors.tobytes()
        assert a.queries.tobytes() == b.queries.tobytes()
        c = gen_synthetic(kind, 300, 6, 4, seed=10)
        assert a.vectors.tobytes() != c.vectors.tobytes()

    @pytest.mark.parametrize("args", [("rotated-clones", 0, 2, 2), ("rotated-clones", 5, 2, 0),
                                      ("spiral", 5, 2, 2)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            gen_synthetic(*args)


class TestExactKnn:
    def test_query_equal_to_base(self):
        base = np.random.default_rng(0).normal(size=(50, 4))
        assert exact_knn(base, base[7:8], 3)[0, 0] == 7

    def test_full_permutation(self):
        rng = np.random.default_rng(1)
        base, q = rng.normal(size=(30, 3)), rng.normal(size=(2, 3))
        out = exact_knn(base, q, 30)
        for row, qq in zip(out, q):
            assert sorted(row.tolist()) == list(range(30))
            d = np.sum((base[row] - qq) ** 2, axis=1)
            assert np.all(np.diff(d) >= 0)

    def test_naive_loop(self):
        rng = np.random.default_rng(2)
        base, q = rng.normal(size=(100, 8)), rng.normal(size=(10, 8))
        out = exact_knn(base, q, 5)
        for row, qq in zip(out, q):
            d = [sum((base[i, j] - qq[j]) ** 2 for j in range(8)) for i in range(100)]
            expect = sorted(range(100), key=lambda i: (d[i], i))[:5]
            assert row.tolist() == expect

    def test_ties_to_lower_id(self):
        base = np.array([[1.0], [-1.0], [1.0], [3.0]] * 5)
        assert exact_knn(base, [[0.0]], 4)[0].tolist() == [0, 1, 2, 4]

    def test_r_too_large(self):
        with pytest.raises(ValueError):
            exact_knn(np.zeros((3, 2)), np.zeros((1, 2)), 4)


@pytest.fixture(scope="module")
def data():
    return gen_synthetic("rotated-clones", 1500, 8, 4, seed=0).vectors


def _models(data):
    yield train_kmeans(data, 5, seed=0)[0]
    yield train_pq(data, 2, 8, seed=0)
    yield OpqModel(*train_opq(data, 2, 8, outer_iters=2, seed=0))
    yield train_rq(data, [4, ("pq", 8, 2)], seed=0)[0]
    yield train_trq(data, 4, ("pq", 8, 2), ia_iters=3, seed=0)[0]
    yield build_ivf_trq(data, 4, 2, 8, ia_iters=2, seed=0)
    yield build_multi_index_trq(data, 3, 2, 8, ia_iters=2, seed=0)
    yield build_multi_index_trq(data, 3, 2, 8, ia_iters=2, seed=0, use_global_rotation=True,
                                opq_iters=2)


def _flatten(obj):
    if isinstance(obj, np.ndarray):
        return [obj]
    if isinstance(obj, (list, tuple)):
        return [a for x in obj for a in _flatten(x)]
    if hasattr(obj, "__dataclass_fields__"):
        return [a for name in obj.__dataclass_fields__ for a in _flatten(getattr(obj, name))]
    if hasattr(obj, "__dict__"):
        return [a for x in vars(obj).values() for a in _flatten(x)]
    return [np.asarray(obj)] if obj is not None else []


class TestArchive:
    def test_roundtrip_every_kind(self, tmp_path, data):
        for n, model in enumerate(_models(data)):
            p = tmp_path / f"m{n}.trq"
            save_model(p, model)
            back = load_model(p)
            assert type(back) is type(model)
            a, b = _flatten(model), _flatten(back)
            assert len(a) == len(b)
            for x, y in zip(a, b):
                assert x.shape == y.shape and x.tobytes() == np.asarray(y, x.dtype).tobytes()
            save_model(tmp_path / "again.trq", back)
            assert (tmp_path / "again.trq").read_bytes() == p.read_bytes()

    def test_reloaded_trq_encodes_identically(self, tmp_path, data):
        model, _ = train_trq(data, 4, ("kmeans", 16), ia_iters=4, seed=3)
        save_model(tmp_path / "t.trq", model)
        back = load_model(tmp_path / "t.trq")
        for x, y in zip(encode_trq(data, model), encode_trq(data, back)):
            np.testing.assert_array_equal(x, y)

    @pytest.fixture
    def archive(self, tmp_path, data):
        p = tmp_path / "cb.trq"
        save_model(p, train_kmeans(data, 3, seed=0)[0])
        return p

    def test_bad_magic(self, archive):
        raw = bytearray(archive.read_bytes())
        raw[0] ^= 0xFF
        archive.write_bytes(bytes(raw))
        with pytest.raises(ArchiveError, match="magic"):
            load_model(archive)

    def test_bad_version(self, archive):
        raw = bytearray(archive.read_bytes())
        raw[8:12] = struct.pack("<I", 99)
        archive.write_bytes(bytes(raw))
        with pytest.raises(ArchiveError, match="version"):
            load_model(archive)

    @pytest.mark.parametrize("cut", [5, 30, 100])
    def test_truncation(self, archive, cut):
        archive.write_bytes(archive.read_bytes()[:-cut])
        with pytest.raises(ArchiveError):
            load_model(archive)

    def test_corruption(self, archive):
        raw = bytearray(archive.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        archive.write_bytes(bytes(raw))
        with pytest.raises(ArchiveError, match="checksum"):
            load_model(archive)

    def test_unsupported_object(self, tmp_path):
        with pytest.raises(TypeError):
            save_model(tmp_path / "x.trq", object())
        assert not list(tmp_path.iterdir())

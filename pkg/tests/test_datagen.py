from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocoagen import datagen
from cocoagen.datagen import Bernoulli, CorrGaussian, Empirical, IsoGaussian, PartitionSpec
from cocoagen.errors import FormatError, InsufficientDataError, InvalidInputError, InvalidPartitionError


def rng(seed=0):
    return np.random.default_rng(seed)


def test_covariance_p1():
    assert np.allclose(datagen.build_decaying_covariance(1, 0.9631, rng()), [[1.0]])


def test_covariance_trace_200():
    S = datagen.build_decaying_covariance(200, 0.9631, rng(1))
    assert abs(np.trace(S) - 200) < 1e-8
    assert np.allclose(S, S.T)


def test_covariance_geometric_spectrum():
    S = datagen.build_decaying_covariance(3, 0.5, rng(2))
    ev = np.sort(np.linalg.eigvalsh(S))[::-1]
    # (1, 0.5, 0.25) scaled to sum 3 -> 3/1.75 * (1, .5, .25)
    assert np.allclose(ev, np.array([1, 0.5, 0.25]) * 3 / 1.75, atol=1e-12)


def test_covariance_rejects_bad_ratio():
    with pytest.raises(InvalidInputError):
        datagen.build_decaying_covariance(3, 1.5, rng())
    with pytest.raises(InvalidInputError):
        datagen.build_decaying_covariance(3, 0.0, rng())


def test_bernoulli_entries():
    A = datagen.sample_regressors(Bernoulli(7), 50, rng(3))
    assert set(np.unique(A)) <= {-1.0, 1.0}
    B = datagen.sample_regressors(Bernoulli(1), 20000, rng(4))
    assert abs(B.mean()) < 0.03


def test_empirical_exact_rows_unchanged():
    R = rng(5).standard_normal((6, 3))
    assert np.array_equal(datagen.sample_regressors(Empirical(R), 6, rng(6)), R)


def test_empirical_insufficient():
    with pytest.raises(InsufficientDataError):
        datagen.sample_regressors(Empirical(np.ones((3, 2))), 4, rng())


def test_empirical_subsample_rows_from_pool():
    R = np.arange(20.0).reshape(10, 2)
    A = datagen.sample_regressors(Empirical(R), 4, rng(7))
    assert all(any(np.array_equal(a, r) for r in R) for a in A)


def test_iso_sample_covariance():
    A = datagen.sample_regressors(IsoGaussian(5), 10_000, rng(8))
    assert np.abs(A.T @ A / 10_000 - np.eye(5)).max() < 0.1


def test_corr_sample_covariance():
    S = datagen.build_decaying_covariance(4, 0.7, rng(9))
    A = datagen.sample_regressors(CorrGaussian(S), 100_000, rng(10))
    assert np.abs(A.T @ A / 100_000 - S).max() < 0.05


def test_corr_rejects_bad_covariance():
    with pytest.raises(InvalidInputError):
        CorrGaussian(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        CorrGaussian(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_ground_truth_unit_norm():
    for p in (1, 2, 50, 200):
        x = datagen.sample_ground_truth(p, rng(p))
        assert abs(np.linalg.norm(x) - 1) < 1e-12
    x1 = datagen.sample_ground_truth(1, rng(11))
    assert abs(x1[0]) == pytest.approx(1.0)


def test_ground_truth_deterministic():
    assert np.array_equal(datagen.sample_ground_truth(9, rng(12)), datagen.sample_ground_truth(9, rng(12)))


def test_synthesize_noise_free():
    x = datagen.sample_ground_truth(4, rng(13))
    ts = datagen.synthesize(IsoGaussian(4), x, 10, 0.0, rng(14))
    assert np.array_equal(ts.observations, ts.regressors @ x)
    assert ts.consistent()


def test_synthesize_zero_truth_gives_noise():
    ts = datagen.synthesize(IsoGaussian(3), np.zeros(3), 8, 1.0, rng(15))
    assert np.array_equal(ts.observations, ts.noise)


def test_synthesize_noise_variance():
    ts = datagen.synthesize(IsoGaussian(2), np.zeros(2), 10_000, 4.0, rng(16))
    assert 3.8 <= ts.noise.var() <= 4.2


def test_synthesize_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        datagen.synthesize(IsoGaussian(3), np.ones(4), 5, 0.0, rng())


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["iso", "bern", "corr"]), st.integers(1, 6), st.integers(1, 12),
       st.floats(0, 3), st.integers(0, 2**31 - 1))
def test_training_set_consistency(kind, p, n, s2, seed):
    r = rng(seed)
    model = {"iso": IsoGaussian(p), "bern": Bernoulli(p)}.get(kind) or CorrGaussian(
        datagen.build_decaying_covariance(p, 0.9, r))
    ts = datagen.synthesize(model, datagen.sample_ground_truth(p, r), n, s2, r)
    assert ts.consistent()


def test_synthesis_deterministic_and_order_independent():
    seeds = np.random.SeedSequence(42).spawn(3)
    a = [datagen.synthesize(IsoGaussian(5), np.ones(5), 4, 1.0, np.random.default_rng(s)).observations for s in seeds]
    b = [datagen.synthesize(IsoGaussian(5), np.ones(5), 4, 1.0, np.random.default_rng(s)).observations
         for s in reversed(seeds)][::-1]
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_partition_columns():
    A = np.arange(8.0).reshape(2, 4)
    (only,) = datagen.partition_columns(A, PartitionSpec([4]))
    assert np.array_equal(only, A)
    b1, b2 = datagen.partition_columns(A, PartitionSpec([2, 2]))
    assert np.array_equal(b1, A[:, :2]) and np.array_equal(b2, A[:, 2:])
    assert np.array_equal(np.hstack([b1, b2]), A)
    with pytest.raises(InvalidPartitionError):
        datagen.partition_columns(np.zeros((2, 5)), PartitionSpec([1, 2, 3]))


def test_partition_spec_split():
    assert PartitionSpec.split(200, 25, 2).sizes == (25, 175)
    assert PartitionSpec.split(10, 4, 3).sizes == (4, 3, 3)
    assert PartitionSpec.split(11, 4, 3).sizes == (4, 4, 3)
    with pytest.raises(InvalidPartitionError):
        PartitionSpec.split(10, 10, 2)
    with pytest.raises(InvalidPartitionError):
        PartitionSpec([0, 3])


def _idx_images(images: np.ndarray, magic=datagen.IDX_IMAGES_MAGIC) -> bytes:
    m, r, c = images.shape
    return struct.pack(">IIII", magic, m, r, c) + images.astype(np.uint8).tobytes()


def test_idx_two_images(tmp_path):
    imgs = np.array([[[0, 255], [51, 102]], [[255, 0], [0, 255]]], dtype=np.uint8)
    path = tmp_path / "imgs"
    path.write_bytes(_idx_images(imgs))
    X = datagen.load_idx(path)
    assert X.shape == (2, 4)
    assert np.allclose(X[0], [0.0, 1.0, 0.2, 0.4])
    assert np.allclose(X[1], [1.0, 0.0, 0.0, 1.0])


def test_idx_labels_and_gzip(tmp_path):
    import gzip

    raw = struct.pack(">II", datagen.IDX_LABELS_MAGIC, 3) + bytes([7, 0, 9])
    path = tmp_path / "labels.gz"
    path.write_bytes(gzip.compress(raw))
    assert list(datagen.load_idx(path)) == [7, 0, 9]


def test_idx_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(_idx_images(np.zeros((1, 2, 2)), magic=9999))
    with pytest.raises(FormatError):
        datagen.load_idx(path)


def test_idx_truncated(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(_idx_images(np.zeros((2, 2, 2)))[:-3])
    with pytest.raises(FormatError):
        datagen.load_idx(path)


def test_random_features_examples():
    assert np.allclose(datagen.random_fourier_features(np.array([0.3, -2.0]), np.zeros((5, 2))), 1.0)
    W = np.zeros((2, 3))
    W[0, 0] = np.pi
    f = datagen.random_fourier_features(np.array([1.0, 0.0, 0.0]), W)
    assert abs(f[0] + 1.0) < 1e-12
    with pytest.raises(InvalidInputError):
        datagen.random_fourier_features(np.ones(4), np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_random_features_bounded(d, p, seed):
    r = rng(seed)
    z = r.uniform(0, 1, size=(5, d))
    F = datagen.random_fourier_features(z, datagen.sample_frequencies(p, d, r, scale=3.0))
    assert F.shape == (5, p) and np.all(np.abs(F) <= 1.0)


def test_synthetic_corpus_and_subsample():
    imgs = datagen.synthetic_image_corpus(120, rng(20))
    assert imgs.synthetic and imgs.images.shape == (120, 784)
    assert imgs.images.min() >= 0 and imgs.images.max() <= 1
    sub = datagen.subsample(imgs, 60, rng(21))
    assert sub.images.shape[0] == 2


def test_one_vs_rest():
    Y = datagen.one_vs_rest([2, 0], classes=3)
    assert np.array_equal(Y, [[-1, -1, 1], [1, -1, -1]])


def test_dataset_csv_round_trip(tmp_path):
    ts = datagen.synthesize(IsoGaussian(3), datagen.sample_ground_truth(3, rng(22)), 4, 0.5, rng(23))
    paths = datagen.write_training_set(ts, tmp_path / "d.csv")
    assert paths[0].read_text().splitlines()[0] == "row_index,col_index,value"
    back = datagen.read_training_set(tmp_path / "d")
    assert np.array_equal(back.regressors, ts.regressors)
    assert np.array_equal(back.observations, ts.observations)
    assert np.array_equal(back.ground_truth, ts.ground_truth)


def test_matrix_csv_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b,c\n0,0,1\n")
    with pytest.raises(FormatError):
        datagen.read_matrix_csv(path)

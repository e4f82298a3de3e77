"""Synthetic data generation and image ingestion.

Regressor families: isotropic Gaussian, correlated Gaussian with a supplied
covariance, symmetric Bernoulli on {-1, +1}, and an empirical pool of rows
(used for random-feature data built from images).
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InsufficientDataError, InvalidInputError, InvalidPartitionError
from .numkern import as_matrix, as_vector, sample_haar_orthogonal, symmetric_sqrt

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
DEFAULT_DECAY = 0.9631
DEFAULT_FREQ_SCALE = 0.2


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class IsoGaussian:
    dim: int

    def covariance(self) -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True)
class Bernoulli:
    dim: int

    def covariance(self) -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True, eq=False)
class CorrGaussian:
    cov: np.ndarray
    _root: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        S = as_matrix(self.cov, "covariance")
        if S.shape[0] != S.shape[1]:
            raise InvalidInputError("covariance must be square")
        scale = max(1.0, float(np.abs(S).max()))
        if np.abs(S - S.T).max() > 1e-10 * scale:
            raise InvalidInputError("covariance must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 1e-10 * scale:
            raise InvalidInputError("covariance must be positive definite")
        object.__setattr__(self, "cov", S)
        object.__setattr__(self, "_root", symmetric_sqrt(S))

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def covariance(self) -> np.ndarray:
        return self.cov


@dataclass(frozen=True, eq=False)
class Empirical:
    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", as_matrix(self.rows, "empirical rows"))

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def covariance(self) -> np.ndarray:
        R = self.rows
        return R.T @ R / R.shape[0]


RegressorModel = IsoGaussian | CorrGaussian | Bernoulli | Empirical


@dataclass(frozen=True)
class TrainingSet:
    regressors: np.ndarray  # n x p
    observations: np.ndarray  # n
    ground_truth: np.ndarray  # p
    noise: np.ndarray  # n
    noise_variance: float = 0.0

    @property
    def n(self) -> int:
        return self.regressors.shape[0]

    @property
    def p(self) -> int:
        return self.regressors.shape[1]

    def consistent(self, tol: float = 1e-12) -> bool:
        resid = self.observations - (self.regressors @ self.ground_truth + self.noise)
        scale = max(1.0, float(np.abs(self.observations).max(initial=0.0)))
        return bool(np.abs(resid).max(initial=0.0) <= tol * scale)


@dataclass(frozen=True)
class PartitionSpec:
    sizes: tuple[int, ...]

    def __init__(self, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 1:
            raise InvalidPartitionError("need at least one block")
        if any(s < 1 for s in sizes):
            raise InvalidPartitionError(f"block sizes must be positive: {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def p(self) -> int:
        return sum(self.sizes)

    def offsets(self) -> list[int]:
        return [0, *np.cumsum(self.sizes).tolist()]

    def slices(self) -> list[slice]:
        o = self.offsets()
        return [slice(o[k], o[k + 1]) for k in range(self.K)]

    def check(self, p: int) -> None:
        if self.p != p:
            raise InvalidPartitionError(f"partition {self.sizes} sums to {self.p}, expected {p}")

    @classmethod
    def split(cls, p: int, p1: int, K: int = 2) -> "PartitionSpec":
        """First block of size p1, the remaining p - p1 columns spread evenly."""
        if K == 1:
            return cls([p])
        rest = p - p1
        if p1 < 1 or rest < K - 1:
            raise InvalidPartitionError(f"cannot split p={p} with p1={p1} over K={K}")
        base, extra = divmod(rest, K - 1)
        return cls([p1] + [base + (1 if i < extra else 0) for i in range(K - 1)])


# --------------------------------------------------------------------------
# sampling


def build_decaying_covariance(p: int, decay_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """U diag(mu) U^T with Haar U and a geometric spectrum normalized to trace p."""
    if p < 1:
        raise InvalidInputError("p must be at least 1")
    if not 0 < decay_ratio <= 1:
        raise InvalidInputError("decay ratio must lie in (0, 1]")
    mu = decay_ratio ** np.arange(p, dtype=float)
    mu = p * mu / mu.sum()
    U = sample_haar_orthogonal(p, rng)
    S = (U * mu) @ U.T
    return 0.5 * (S + S.T)


def sample_regressors(model: RegressorModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    if isinstance(model, IsoGaussian):
        return rng.standard_normal((n, model.dim))
    if isinstance(model, CorrGaussian):
        return rng.standard_normal((n, model.dim)) @ model._root
    if isinstance(model, Bernoulli):
        return rng.choice(np.array([-1.0, 1.0]), size=(n, model.dim))
    if isinstance(model, Empirical):
        m = model.rows.shape[0]
        if m < n:
            raise InsufficientDataError(f"requested {n} rows from a pool of {m}")
        if m == n:
            return model.rows.copy()
        return model.rows[np.sort(rng.choice(m, size=n, replace=False))]
    raise InvalidInputError(f"unknown regressor model {model!r}")


def sample_ground_truth(p: int, rng: np.random.Generator) -> np.ndarray:
    if p < 1:
        raise InvalidInputError("p must be at least 1")
    while True:
        x = rng.uniform(-1.0, 1.0, size=p)
        nrm = np.linalg.norm(x)
        if nrm > 0:
            return x / nrm


def synthesize(model: RegressorModel, ground_truth, n: int, noise_variance: float,
               rng: np.random.Generator) -> TrainingSet:
    x = as_vector(ground_truth, "ground truth")
    if x.shape[0] != model.dim:
        raise InvalidInputError(f"ground truth has length {x.shape[0]}, model dimension {model.dim}")
    if noise_variance < 0:
        raise InvalidInputError("noise variance must be nonnegative")
    A = sample_regressors(model, n, rng)
    w = np.sqrt(noise_variance) * rng.standard_normal(n)
    return TrainingSet(A, A @ x + w, x, w, float(noise_variance))


def partition_columns(A, spec: PartitionSpec) -> list[np.ndarray]:
    A = np.asarray(A, dtype=float)
    spec.check(A.shape[1])
    return [A[:, s] for s in spec.slices()]


# --------------------------------------------------------------------------
# images and random features


@dataclass(frozen=True)
class ImageSet:
    images: np.ndarray  # m x d, values in [0, 1]
    labels: np.ndarray  # m, ints 0..9
    synthetic: bool = False


def _open_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an IDX payload of unsigned bytes (images or labels)."""
    if len(raw) < 4:
        raise FormatError("IDX header truncated")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"unexpected IDX magic number {magic}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError("IDX dimension header truncated")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise FormatError(f"IDX payload truncated: expected {count} bytes, found {len(raw) - head}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=head)
    return data.reshape(dims)


def load_idx(path) -> np.ndarray:
    """Images come back flattened and scaled to [0,1]; labels as int64."""
    arr = parse_idx(_open_bytes(path))
    if arr.ndim == 3:
        return arr.reshape(arr.shape[0], -1).astype(float) / 255.0
    return arr.astype(np.int64)


def load_idx_pair(images_path, labels_path) -> ImageSet:
    X = load_idx(images_path)
    y = load_idx(labels_path)
    if X.ndim != 2 or y.ndim != 1:
        raise FormatError("expected an image file and a label file")
    if X.shape[0] != y.shape[0]:
        raise FormatError(f"{X.shape[0]} images but {y.shape[0]} labels")
    return ImageSet(X, y)


def find_mnist(directory) -> ImageSet | None:
    """Load the MNIST training split from ``directory`` if present."""
    if directory is None:
        return None
    d = Path(directory)
    for suffix in ("", ".gz"):
        im = d / f"train-images-idx3-ubyte{suffix}"
        lb = d / f"train-labels-idx1-ubyte{suffix}"
        if im.exists() and lb.exists():
            return load_idx_pair(im, lb)
    return None


def synthetic_image_corpus(m: int, rng: np.random.Generator, side: int = 28,
                           classes: int = 10, spread: float = 0.25) -> ImageSet:
    """Stand-in for MNIST: noisy copies of smooth per-class prototypes."""
    d = side * side
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    protos = np.empty((classes, d))
    for c in range(classes):
        cx, cy = rng.uniform(0.25, 0.75, size=2)
        width = rng.uniform(0.1, 0.25)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2))
        protos[c] = blob.ravel()
    labels = rng.integers(0, classes, size=m)
    X = protos[labels] + spread * rng.standard_normal((m, d))
    return ImageSet(np.clip(X, 0.0, 1.0), labels, synthetic=True)


def subsample(images: ImageSet, factor: int, rng: np.random.Generator) -> ImageSet:
    """Uniform subsample without replacement keeping ~1/factor of the rows."""
    m = images.images.shape[0]
    keep = max(1, m // factor)
    idx = np.sort(rng.choice(m, size=keep, replace=False))
    return ImageSet(images.images[idx], images.labels[idx], images.synthetic)


def sample_frequencies(p: int, d: int, rng: np.random.Generator,
                       scale: float = DEFAULT_FREQ_SCALE) -> np.ndarray:
    """p frequency vectors (rows) drawn N(0, scale^2 I_d)."""
    return scale * rng.standard_normal((p, d))


def random_fourier_features(z, frequencies) -> np.ndarray:
    """cos(z^T w_j) for each frequency row w_j; z may be a vector or a batch of rows."""
    W = as_matrix(frequencies, "frequencies")
    Z = np.asarray(z, dtype=float)
    if Z.shape[-1] != W.shape[1]:
        raise InvalidInputError(f"input length {Z.shape[-1]} does not match frequency width {W.shape[1]}")
    return np.cos(Z @ W.T)


def one_vs_rest(labels, classes: int = 10) -> np.ndarray:
    """+1 on the true class column, -1 elsewhere."""
    labels = np.asarray(labels, dtype=int)
    Y = -np.ones((labels.shape[0], classes))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


# --------------------------------------------------------------------------
# CSV


def write_matrix_csv(M, path) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "col_index", "value"])
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                w.writerow([i, j, format(M[i, j], ".17g")])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["row_index", "col_index", "value"]:
            raise FormatError(f"{path}: unexpected header {header}")
        entries = []
        for lineno, row in enumerate(r, start=2):
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields")
            try:
                entries.append((int(row[0]), int(row[1]), float(row[2])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not entries:
        return np.zeros((0, 0))
    rows = max(e[0] for e in entries) + 1
    cols = max(e[1] for e in entries) + 1
    M = np.zeros((rows, cols))
    for i, j, v in entries:
        M[i, j] = v
    return M


def write_training_set(ts: TrainingSet, stem) -> list[Path]:
    """Writes <stem>.csv (regressors), <stem>_y.csv, <stem>_x.csv, <stem>_w.csv."""
    stem = Path(stem)
    if stem.suffix == ".csv":
        stem = stem.with_suffix("")
    paths = [stem.with_name(stem.name + s + ".csv") for s in ("", "_y", "_x", "_w")]
    write_matrix_csv(ts.regressors, paths[0])
    write_matrix_csv(ts.observations[:, None], paths[1])
    write_matrix_csv(ts.ground_truth[:, None], paths[2])
    write_matrix_csv(ts.noise[:, None], paths[3])
    return paths


def read_training_set(stem, noise_variance: float = 0.0) -> TrainingSet:
    stem = Path(stem)
    if stem.suffix == ".csv":
        stem = stem.with_suffix("")
    A = read_matrix_csv(stem.with_name(stem.name + ".csv"))
    y = read_matrix_csv(stem.with_name(stem.name + "_y.csv"))[:, 0]
    x = read_matrix_csv(stem.with_name(stem.name + "_x.csv"))[:, 0]
    wpath = stem.with_name(stem.name + "_w.csv")
    w = read_matrix_csv(wpath)[:, 0] if wpath.exists() else y - A @ x
    if A.shape[0] != y.shape[0] or A.shape[1] != x.shape[0]:
        raise FormatError("dataset files have inconsistent shapes")
    return TrainingSet(A, y, x, w, noise_variance)

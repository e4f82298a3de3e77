"""Closed-form error quantities and high-probability bounds on ||B||.

Bounds are returned as ``BoundResult(beta, rho)``: the claim is that
||B|| <= beta with probability at least rho over the draw of the training
regressors. Every (.)_+ clamp turns into beta = inf or rho = 0 rather than an
exception so that sweeps over partitions stay total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError, PreconditionError

INF = math.inf
GAUSS_L = math.sqrt(8.0 / 3.0)  # psi_2 norm of a standard normal
GAUSS_L2 = 8.0 / 3.0


def _pos(v: float) -> float:
    return v if v > 0.0 else 0.0


def _prob(v: float) -> float:
    return min(1.0, _pos(v))


@dataclass(frozen=True)
class PartitionDims:
    n: int
    sizes: tuple[int, ...]

    def __init__(self, n: int, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if n < 1 or not sizes or any(s < 1 for s in sizes):
            raise InvalidInputError(f"dimensions must be positive: n={n}, sizes={sizes}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "sizes", sizes)

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def r_min(self) -> tuple[int, ...]:
        return tuple(min(p, self.n) for p in self.sizes)

    @property
    def r_max(self) -> tuple[int, ...]:
        return tuple(max(p, self.n) for p in self.sizes)

    def broad(self, k: int) -> bool:
        return self.n < self.sizes[k]

    @property
    def broad_set(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.K) if self.broad(k))

    def all_tall(self) -> bool:
        return not self.broad_set


@dataclass(frozen=True)
class BoundInputs:
    dims: PartitionDims
    q: tuple[float, ...]
    q_bar: tuple[float, ...] | None = None
    C: float = 1.0
    L: tuple[float, ...] | None = None  # sub-gaussian norms, >= 1
    spectra: tuple[tuple[float, float], ...] | None = None  # (sigma_max, sigma_min) of each Sigma_k

    def __post_init__(self):
        K = self.dims.K
        object.__setattr__(self, "q", _vec(self.q, K, "q"))
        object.__setattr__(self, "q_bar", _vec(self.q_bar if self.q_bar is not None else [0.0] * K, K, "q_bar"))
        if not self.C > 0:
            raise InvalidInputError("absolute constant C must be positive")
        if self.L is not None:
            L = tuple(float(v) for v in self.L)
            if len(L) != K or any(not v >= 1.0 for v in L):
                raise InvalidInputError("need one sub-gaussian constant L_k >= 1 per block")
            object.__setattr__(self, "L", L)
        if self.spectra is None:
            object.__setattr__(self, "spectra", tuple((1.0, 1.0) for _ in range(K)))
        else:
            sp = tuple((float(a), float(b)) for a, b in self.spectra)
            if len(sp) != K or any(not (a >= b > 0) for a, b in sp):
                raise InvalidInputError("block spectra must be (max, min) pairs with max >= min > 0")
            object.__setattr__(self, "spectra", sp)


def _vec(vals, K, name) -> tuple[float, ...]:
    out = tuple(float(v) for v in vals)
    if len(out) != K:
        raise InvalidInputError(f"{name} needs {K} entries, got {len(out)}")
    if any(not v >= 0 for v in out):
        raise InvalidInputError(f"{name} entries must be nonnegative")
    return out


@dataclass(frozen=True)
class BoundResult:
    beta: float
    rho: float
    name: str = ""

    @property
    def vacuous(self) -> bool:
        return math.isinf(self.beta) or self.rho <= 0.0


@dataclass(frozen=True)
class AverageErrorTerms:
    alphas: tuple[float, ...]
    gammas: tuple[float, ...]
    total: float
    signal: float = field(default=0.0)
    noise: float = field(default=0.0)


# --------------------------------------------------------------------------
# errors


def generalization_error(x, estimate, covariance) -> float:
    S = np.asarray(covariance, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidInputError("covariance must be square")
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(S).max(initial=0.0)):
        raise InvalidInputError("covariance must be symmetric")
    e = np.asarray(x, dtype=float) - np.asarray(estimate, dtype=float)
    if e.shape[0] != S.shape[0]:
        raise InvalidInputError("error vector and covariance dimensions differ")
    return float(max(0.0, e @ S @ e))


def prediction_error(kappa: float, test_noise_variance: float) -> float:
    if kappa < 0 or test_noise_variance < 0:
        raise InvalidInputError("both terms must be nonnegative")
    return kappa + test_noise_variance


# --------------------------------------------------------------------------
# isotropic Gaussian


def tracy_widom_interval(n: int, p: int, q: float) -> tuple[float, float, float]:
    """Interval for the extreme singular values of an n x p standard Gaussian matrix."""
    if n < 1 or p < 1 or q < 0:
        raise InvalidInputError("need n, p >= 1 and q >= 0")
    a, b = math.sqrt(max(n, p)), math.sqrt(min(n, p))
    return a - b - q, a + b + q, _prob(1.0 - 2.0 * math.exp(-q * q / 2.0))


def _iso_ratios(dims: PartitionDims, q) -> list[list[float]]:
    q = _vec(q, dims.K, "q")
    num, den = [], []
    for rmax, rmin, qk in zip(dims.r_max, dims.r_min, q):
        a, b = math.sqrt(rmax), math.sqrt(rmin)
        num.append((a + b + qk) ** 2)
        gap = a - b - qk
        den.append(gap * gap if gap > 0 else 0.0)
    K = dims.K
    out = [[0.0] * K for _ in range(K)]
    for k in range(K):
        for i in range(K):
            if i != k:
                out[k][i] = num[k] / den[i] if den[i] > 0 else INF
    return out


def _cross_sum(g) -> float:
    K = len(g)
    return sum(g[k][i] for k in range(K) for i in range(K) if i != k)


def _beta_full(K: int, cross: float) -> float:
    return 1.0 + math.sqrt(K + cross) / K


def _beta_tall(K: int, cross: float) -> float:
    return math.sqrt((K - 1) ** 2 / K + cross / K**2)


def _iso_rho(q) -> float:
    rho = 1.0
    for qk in q:
        rho *= _prob(1.0 - 2.0 * math.exp(-qk * qk / 2.0))
    return rho


def beta_iso_gaussian(dims: PartitionDims, q) -> BoundResult:
    g = _iso_ratios(dims, q)
    return BoundResult(_beta_full(dims.K, _cross_sum(g)), _iso_rho(q), "iso")


def beta_iso_gaussian_tall(dims: PartitionDims, q) -> BoundResult:
    if not dims.all_tall():
        raise PreconditionError(f"all blocks must satisfy p_k <= n, got {dims.sizes} with n={dims.n}")
    g = _iso_ratios(dims, q)
    return BoundResult(_beta_tall(dims.K, _cross_sum(g)), _iso_rho(q), "iso-tall")


def q_for_probability(rho: float, K: int) -> float:
    """q shared by all K blocks such that prod (1 - 2 exp(-q^2/2)) = rho."""
    if not 0 < rho < 1:
        raise InvalidInputError("target probability must lie in (0, 1)")
    per = rho ** (1.0 / K)
    return math.sqrt(-2.0 * math.log((1.0 - per) / 2.0))


# --------------------------------------------------------------------------
# correlated Gaussian and sub-gaussian


def _ell(n: int, p: int, q: float, smax: float, C: float, l2: float, scaled: bool = True) -> float:
    r = (p + q) / n
    base = l2 * C * (math.sqrt(r) + r)
    return base * n * smax if scaled else base


def subgaussian_tail(n: int, p: int, spectrum_max: float, spectrum_min: float, L: float, C: float,
                     q: float) -> tuple[float, float, float, float]:
    """(ell, lower, upper, probability) for the squared extreme singular values of Z Sigma^(1/2)."""
    if n < 1 or p < 1 or not C > 0 or not L > 0 or q < 0:
        raise InvalidInputError("need n, p >= 1, C, L > 0 and q >= 0")
    ell = _ell(n, p, q, spectrum_max, C, L * L)
    return ell, n * spectrum_min - ell, n * spectrum_max + ell, _prob(1.0 - 2.0 * math.exp(-q))


def broad_min_singular_bound(n: int, p: int, spectrum_min: float, L: float, C: float, q_bar: float,
                             gaussian: bool = False) -> tuple[float, float]:
    """Lower bound on sigma_min(M)^2 for a broad n x p matrix with S(Sigma) rows.

    ``gaussian=True`` uses the sharper Gaussian-specific form, which does not
    involve C or L.
    """
    if n >= p:
        raise PreconditionError(f"needs n < p, got n={n}, p={p}")
    if gaussian:
        gap = math.sqrt(p) - math.sqrt(n) - q_bar
        return spectrum_min * _pos(gap) ** 2, _prob(1.0 - 2.0 * math.exp(-q_bar * q_bar / 2.0))
    gap = math.sqrt(p) - C * L * L * (math.sqrt(n) + q_bar)
    return spectrum_min * _pos(gap) ** 2, _prob(1.0 - 2.0 * math.exp(-q_bar * q_bar))


def _ratio_matrix(num, den) -> list[list[float]]:
    K = len(num)
    out = [[0.0] * K for _ in range(K)]
    for k in range(K):
        for i in range(K):
            if i != k:
                out[k][i] = num[k] / den[i] if den[i] > 0 else INF
    return out


def _tall_terms(inp: BoundInputs, l2s, scaled=True):
    n = inp.dims.n
    num, den = [], []
    for k, p in enumerate(inp.dims.sizes):
        smax, smin = inp.spectra[k]
        ell = _ell(n, p, inp.q[k], smax, inp.C, l2s[k], scaled)
        num.append(n * smax + ell)
        den.append(_pos(n * smin - ell))
    return num, den


def _tail_sum(q) -> float:
    return sum(2.0 * math.exp(-qk) for qk in q)


def beta_corr_gaussian(inp: BoundInputs) -> BoundResult:
    dims = inp.dims
    l2s = [GAUSS_L2] * dims.K
    num, den = _tall_terms(inp, l2s)
    miss = _tail_sum(inp.q)
    for k in dims.broad_set:
        gap = math.sqrt(dims.sizes[k]) - math.sqrt(dims.n) - inp.q_bar[k]
        den[k] = inp.spectra[k][1] * _pos(gap) ** 2
        miss += 2.0 * math.exp(-inp.q_bar[k] ** 2 / 2.0)
    cross = _cross_sum(_ratio_matrix(num, den))
    return BoundResult(_beta_full(dims.K, cross), _prob(1.0 - miss), "corr")


def beta_corr_gaussian_tall(inp: BoundInputs) -> BoundResult:
    dims = inp.dims
    if not dims.all_tall():
        raise PreconditionError(f"all blocks must satisfy p_k <= n, got {dims.sizes} with n={dims.n}")
    num, den = _tall_terms(inp, [GAUSS_L2] * dims.K)
    cross = _cross_sum(_ratio_matrix(num, den))
    return BoundResult(_beta_tall(dims.K, cross), _prob(1.0 - _tail_sum(inp.q)), "corr-tall")


def _sub_l2(inp: BoundInputs):
    if inp.L is None:
        raise InvalidInputError("sub-gaussian bounds need the constants L_k")
    return [v * v for v in inp.L]


def beta_sub_gaussian(inp: BoundInputs, literal_ell: bool = False) -> BoundResult:
    """``literal_ell`` drops the n * sigma_max factor from ell_k (alternative reading)."""
    dims = inp.dims
    l2s = _sub_l2(inp)
    num, den = _tall_terms(inp, l2s, scaled=not literal_ell)
    miss = _tail_sum(inp.q)
    for k in dims.broad_set:
        gap = math.sqrt(dims.sizes[k]) - inp.C * l2s[k] * (math.sqrt(dims.n) + inp.q_bar[k])
        den[k] = inp.spectra[k][1] * _pos(gap) ** 2
        miss += 2.0 * math.exp(-inp.q_bar[k] ** 2)
    cross = _cross_sum(_ratio_matrix(num, den))
    return BoundResult(_beta_full(dims.K, cross), _prob(1.0 - miss), "subgauss")


def beta_sub_gaussian_tall(inp: BoundInputs, literal_ell: bool = False) -> BoundResult:
    dims = inp.dims
    if not dims.all_tall():
        raise PreconditionError(f"all blocks must satisfy p_k <= n, got {dims.sizes} with n={dims.n}")
    num, den = _tall_terms(inp, _sub_l2(inp), scaled=not literal_ell)
    cross = _cross_sum(_ratio_matrix(num, den))
    return BoundResult(_beta_full(dims.K, cross), _prob(1.0 - _tail_sum(inp.q)), "subgauss-tall")


def block_spectra(cov, sizes: Sequence[int]) -> tuple[tuple[float, float], ...]:
    """(largest, smallest) eigenvalue of each diagonal block of ``cov``."""
    S = np.asarray(cov, dtype=float)
    out, o = [], 0
    for p in sizes:
        ev = np.linalg.eigvalsh(S[o:o + p, o:o + p])
        out.append((float(ev[-1]), float(ev[0])))
        o += p
    return tuple(out)


def estimate_subgaussian_constant(rows, cov=None, directions: int = 200, rng=None) -> float:
    """Empirical sub-gaussian constant of a regressor distribution.

    For each sampled unit direction h, finds the smallest L with
    mean(exp(z^2 / L^2)) <= 2, where z = h^T a / sqrt(h^T Sigma h) over the
    sample rows a. Returns the largest such L (at least 1). Includes the
    coordinate directions. The sample mean replaces the expectation, so the
    result is an estimate.
    """
    R = np.asarray(rows, dtype=float)
    m, p = R.shape
    S = R.T @ R / m if cov is None else np.asarray(cov, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    H = rng.standard_normal((directions, p))
    H = np.vstack([np.eye(p), H / np.linalg.norm(H, axis=1, keepdims=True)])
    best = 1.0
    for h in H:
        var = float(h @ S @ h)
        if var <= 0:
            continue
        z2 = (R @ h) ** 2 / var
        zmax = float(z2.max())
        if zmax == 0:
            continue

        def excess(L):
            # log-mean-exp for stability
            a = z2 / (L * L)
            top = a.max()
            return top + math.log(np.mean(np.exp(a - top))) - math.log(2.0)

        lo, hi = 1e-3, max(2.0, 4.0 * math.sqrt(zmax))
        if excess(hi) > 0:  # pragma: no cover - hi chosen so exp term is tiny
            continue
        if excess(lo) <= 0:
            continue
        best = max(best, brentq(excess, lo, hi, xtol=1e-10))
    return best


# --------------------------------------------------------------------------
# average error and misc


def avg_gen_error(dims: PartitionDims, block_norms_sq, noise_trace: float = 0.0) -> AverageErrorTerms:
    """Expected generalization error of the first iterate under isotropic Gaussian data.

    The noise contribution is tr(Sigma_w)/(n K^2) * sum_k gamma_k, i.e. for
    white noise of variance s2 it equals s2/K^2 * sum_k gamma_k.
    """
    K, n = dims.K, dims.n
    xs = _vec(block_norms_sq, K, "block norms")
    if noise_trace < 0:
        raise InvalidInputError("noise trace must be nonnegative")
    gammas = []
    for p, rmin, rmax in zip(dims.sizes, dims.r_min, dims.r_max):
        gammas.append(INF if abs(p - n) <= 1 else rmin / (rmax - rmin - 1))
    alphas = []
    for k in range(K):
        others = sum(gammas[i] for i in range(K) if i != k)
        alphas.append((K * K + (1 - 2 * K) * dims.r_min[k] / dims.sizes[k] + others) / K**2)
    signal = 0.0
    for xk, a in zip(xs, alphas):
        if xk > 0:
            signal += xk * a
    gsum = sum(gammas)
    noise = noise_trace * gsum / (n * K * K) if noise_trace > 0 else 0.0
    return AverageErrorTerms(tuple(alphas), tuple(gammas), signal + noise, signal, noise)


def abar_a_bound_rhs(block_max, block_min_nonzero) -> float:
    smax = [float(v) for v in block_max]
    smin = [float(v) for v in block_min_nonzero]
    if len(smax) != len(smin) or not smax:
        raise InvalidInputError("need equal-length nonempty lists")
    if any(not v > 0 for v in smin):
        raise InvalidInputError("smallest nonzero singular values must be positive")
    K = len(smax)
    return K + sum(smax[k] ** 2 / smin[i] ** 2 for k in range(K) for i in range(K) if i != k)


def gen_err_bound_from_beta(beta: float, t: int, x_norm_sq: float, cov_norm: float) -> float:
    if beta < 0 or t < 0 or x_norm_sq < 0 or cov_norm < 0:
        raise InvalidInputError("all arguments must be nonnegative")
    scale = cov_norm * x_norm_sq
    if t == 0:
        return scale
    if scale == 0.0:
        return 0.0
    if math.isinf(beta):
        return INF
    try:
        return scale * math.pow(beta, 2 * t)
    except OverflowError:
        return INF

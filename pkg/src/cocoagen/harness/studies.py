"""Seeded Monte Carlo studies.

Seeding is hierarchical: the master seed spawns one stream for quantities
shared by every trial (ground truth, covariance, image pool) and one stream
per trial. Trials can therefore run on any number of workers and are reduced
in trial order, so reports do not depend on the schedule.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import datagen, theory
from ..cocoa import CocoaConfig, centralized_solve, cocoa_iterates, iteration_matrix, training_error
from ..datagen import PartitionSpec
from ..errors import PreconditionError, ValidationError
from ..numkern import min_nonzero_singular, spectral_norm
from .plan import ExperimentPlan
from .report import ReportTable

MOM_BLOCKS = 50


# --------------------------------------------------------------------------
# small helpers


def empirical_mse(test_regressors, x, estimate) -> float:
    r = np.asarray(test_regressors, dtype=float) @ (np.asarray(x, dtype=float) - np.asarray(estimate, dtype=float))
    return float(np.mean(r * r))


def median_of_means(values, blocks: int = MOM_BLOCKS) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    blocks = min(blocks, v.size)
    return float(np.median([b.mean() for b in np.array_split(v, blocks)]))


def trial_seeds(master: int, trials: int):
    """(shared seed, [per-trial seeds]) spawned from the master seed."""
    shared, per_trial = np.random.SeedSequence(master).spawn(2)
    return shared, per_trial.spawn(trials)


def map_trials(fn, seeds, workers: int = 1) -> list:
    """Apply fn(index, seed) to every trial; results come back in trial order."""
    if workers <= 1:
        return [fn(i, s) for i, s in enumerate(seeds)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(len(seeds)), seeds))


def iterations_to_tolerance(estimates, reference, tol: float) -> int:
    """First t with ||x^s - reference|| <= tol * max(1, ||reference||) for every s >= t; -1 if never."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(reference, dtype=float)
    d = np.linalg.norm((est - ref).reshape(est.shape[0], -1), axis=1)
    ok = d <= tol * max(1.0, float(np.linalg.norm(ref)))
    if not ok[-1]:
        return -1
    bad = np.flatnonzero(~ok)
    return int(bad[-1] + 1) if bad.size else 0


def partition_list(plan: ExperimentPlan) -> list[PartitionSpec]:
    if plan.partition:
        return [PartitionSpec(plan.partition)]
    return [PartitionSpec.split(plan.p, p1, plan.K) for p1 in plan.sweep_p1()]


# --------------------------------------------------------------------------
# shared state and per-trial data


@dataclass
class Shared:
    x: np.ndarray | None
    model: object | None
    cov: np.ndarray
    pool: datagen.ImageSet | None = None

    @property
    def synthetic_pool(self) -> bool:
        return self.pool is not None and self.pool.synthetic


@dataclass
class TrialData:
    A: np.ndarray
    w0: np.ndarray  # unit-variance noise, scaled per noise level
    A_test: np.ndarray
    x: np.ndarray | None = None
    Y: np.ndarray | None = None  # label targets for the feature model
    Y_test: np.ndarray | None = None

    def targets(self, noise_variance: float = 0.0) -> np.ndarray:
        if self.Y is not None:
            return self.Y
        y = self.A @ self.x
        if noise_variance > 0:
            y = y + math.sqrt(noise_variance) * self.w0
        return y

    def mse(self, estimates) -> np.ndarray:
        """Test MSE of one estimate (p[, m]) or a stack (T+1, p[, m])."""
        est = np.asarray(estimates, dtype=float)
        single = est.ndim == (1 if self.Y is None else 2)
        if single:
            est = est[None]
        if self.Y is None:
            R = self.A_test @ (self.x[:, None] - est.T)
            out = np.mean(R * R, axis=0)
        else:
            pred = np.einsum("ij,tjm->tim", self.A_test, est)
            out = np.mean((pred - self.Y_test[None]) ** 2, axis=(1, 2))
        return out[0] if single else out


def make_shared(plan: ExperimentPlan, seed) -> Shared:
    rng = np.random.default_rng(seed)
    if plan.model == "features":
        pool = datagen.find_mnist(plan.mnist_dir)
        if pool is not None:
            pool = datagen.subsample(pool, plan.subsample_factor, rng)
        else:
            pool = datagen.synthetic_image_corpus(plan.corpus_size, rng)
        if not plan.scale_pixels:
            pool = datagen.ImageSet(pool.images * 255.0, pool.labels, pool.synthetic)
        if pool.images.shape[0] < plan.n + 1:
            raise ValidationError(f"image pool has {pool.images.shape[0]} rows, need more than n={plan.n}")
        return Shared(None, None, np.eye(plan.p), pool)
    if plan.model == "corr":
        cov = datagen.build_decaying_covariance(plan.p, plan.decay_ratio, rng)
        model = datagen.CorrGaussian(cov)
    elif plan.model == "bern":
        cov, model = np.eye(plan.p), datagen.Bernoulli(plan.p)
    else:
        cov, model = np.eye(plan.p), datagen.IsoGaussian(plan.p)
    x = datagen.sample_ground_truth(plan.p, rng)
    return Shared(x, model, cov)


def fixed_truth(plan: ExperimentPlan, shared: Shared, spec: PartitionSpec | None = None) -> np.ndarray:
    x = shared.x.copy()
    if plan.equal_block_energy and spec is not None:
        for s in spec.slices():
            x[s] *= math.sqrt(1.0 / spec.K) / np.linalg.norm(x[s])
    return x


def make_trial(plan: ExperimentPlan, shared: Shared, seed, x=None, test: bool = True) -> TrialData:
    rng = np.random.default_rng(seed)
    n = plan.n
    if shared.pool is not None:
        pool = shared.pool
        n_test = min(plan.n_test, pool.images.shape[0] - n) if test else 0
        idx = rng.choice(pool.images.shape[0], size=n + n_test, replace=False)
        W = datagen.sample_frequencies(plan.p, pool.images.shape[1], rng, plan.freq_scale)
        F = datagen.random_fourier_features(pool.images[idx], W)
        Y = datagen.one_vs_rest(pool.labels[idx])
        return TrialData(F[:n], np.zeros(n), F[n:], None, Y[:n], Y[n:])
    A = datagen.sample_regressors(shared.model, n, rng)
    w0 = rng.standard_normal(n)
    A_test = datagen.sample_regressors(shared.model, plan.n_test, rng) if test else np.zeros((0, plan.p))
    return TrialData(A, w0, A_test, shared.x if x is None else x)


def _config(plan: ExperimentPlan, lam=0.0, sigma=None, iterations=None) -> CocoaConfig:
    return CocoaConfig(lam=lam, aggregation=plan.aggregation, subproblem=sigma,
                       iterations=plan.iterations if iterations is None else iterations)


def _provenance(plan: ExperimentPlan, shared: Shared | None = None, **extra) -> dict:
    prov = {"plan": plan.echo(), "master_seed": plan.seed}
    if shared is not None and shared.pool is not None:
        prov["corpus"] = "synthetic" if shared.pool.synthetic else "mnist"
    prov.update(extra)
    return prov


def _stats(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    return float(np.mean(v)), float(np.median(v))


# --------------------------------------------------------------------------
# studies


def partition_sweep(plan: ExperimentPlan) -> ReportTable:
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    specs = partition_list(plan)
    noise = plan.noise_variances[0]
    cfg = _config(plan, lam=plan.lambdas[0], sigma=plan.subproblems[0] if plan.subproblems else None)

    def one(i, seed):
        td = make_trial(plan, shared, seed)
        y = td.targets(noise)
        out = []
        for spec in specs:
            xh = cocoa_iterates(td.A, y, spec, cfg, record=False).final
            tr = training_error(td.A, td.x, xh) if td.x is not None else float("nan")
            out.append((td.mse(xh), tr))
        return out

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "partition", "mean_mse", "median_mse", "mean_training_error", "analytic_mse"),
                        provenance=_provenance(plan, shared))
    for j, spec in enumerate(specs):
        mse = [r[j][0] for r in res]
        tr = [r[j][1] for r in res]
        analytic = float("nan")
        if plan.model == "iso" and plan.lambdas[0] == 0:
            norms = [float(np.sum(shared.x[s] ** 2)) for s in spec.slices()]
            analytic = theory.avg_gen_error(theory.PartitionDims(plan.n, spec.sizes), norms,
                                            plan.n * noise).total
        table.add(spec.sizes[0], list(spec.sizes), *_stats(mse), float(np.mean(tr)), analytic)
    return table


def spectral_study(plan: ExperimentPlan) -> ReportTable:
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    specs = partition_list(plan)
    noise = plan.noise_variances[0]
    cfg = _config(plan, lam=plan.lambdas[0])

    def one(i, seed):
        td = make_trial(plan, shared, seed)
        y = td.targets(noise)
        out = []
        for spec in specs:
            nb = spectral_norm(iteration_matrix(td.A, spec).B)
            xh = cocoa_iterates(td.A, y, spec, cfg, record=False).final
            out.append((nb, td.mse(xh)))
        return out

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "rank", "trial", "norm_B", "mse"),
                        provenance=_provenance(plan, shared, ordering="descending norm_B, ties by trial index"))
    for j, spec in enumerate(specs):
        recs = [(i, r[j][0], r[j][1]) for i, r in enumerate(res)]
        recs.sort(key=lambda rec: -rec[1])  # stable: ties keep trial order
        for rank, (i, nb, mse) in enumerate(recs):
            table.add(spec.sizes[0], rank, i, nb, mse)
    return table


def convergence_study(plan: ExperimentPlan) -> ReportTable:
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    specs = partition_list(plan)
    noise = plan.noise_variances[0]
    cfg = _config(plan, lam=plan.lambdas[0])

    def one(i, seed):
        td = make_trial(plan, shared, seed)
        y = td.targets(noise)
        return [td.mse(cocoa_iterates(td.A, y, spec, cfg).estimates) for spec in specs]

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "t", "mean_mse", "median_mse"), provenance=_provenance(plan, shared))
    for j, spec in enumerate(specs):
        curves = np.array([r[j] for r in res])
        for t in range(curves.shape[1]):
            table.add(spec.sizes[0], t, *_stats(curves[:, t]))
    return table


def noise_study(plan: ExperimentPlan) -> ReportTable:
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    specs = partition_list(plan)
    cfg = _config(plan, lam=plan.lambdas[0])
    levels = list(plan.noise_variances)

    def one(i, seed):
        td = make_trial(plan, shared, seed)
        out = []
        for spec in specs:
            out.append([td.mse(cocoa_iterates(td.A, td.targets(s2), spec, cfg, record=False).final)
                        for s2 in levels])
        return out

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "noise_variance", "mean_mse", "median_mse"), provenance=_provenance(plan, shared))
    for j, spec in enumerate(specs):
        for m, s2 in enumerate(levels):
            table.add(spec.sizes[0], s2, *_stats([r[j][m] for r in res]))
    return table


def regularization_study(plan: ExperimentPlan) -> ReportTable:
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    specs = partition_list(plan)
    noise = plan.noise_variances[0]
    checks = plan.checkpoint_list()
    lams = list(plan.lambdas)
    record = checks != [plan.iterations]

    def one(i, seed):
        td = make_trial(plan, shared, seed)
        y = td.targets(noise)
        out = []
        for spec in specs:
            per = []
            for lam in lams:
                traj = cocoa_iterates(td.A, y, spec, _config(plan, lam=lam), record=record)
                curve = td.mse(traj.estimates)
                vals = [curve[min(c, len(curve) - 1)] for c in checks] if record else [curve[-1]]
                ref = td.mse(centralized_solve(td.A, y, lam))
                per.append((vals, ref))
            out.append(per)
        return out

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "t", "lambda", "mean_mse", "median_mse", "centralized_mse"),
                        provenance=_provenance(plan, shared))
    for j, spec in enumerate(specs):
        for m, lam in enumerate(lams):
            ref = float(np.mean([r[j][m][1] for r in res]))
            for c_idx, t in enumerate(checks):
                table.add(spec.sizes[0], t, lam, *_stats([r[j][m][0][c_idx] for r in res]), ref)
    return table


def hyperparam_study(plan: ExperimentPlan) -> ReportTable:
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    specs = partition_list(plan)
    noise = plan.noise_variances[0]
    sigmas = plan.sigma_values()

    def one(i, seed):
        td = make_trial(plan, shared, seed)
        y = td.targets(noise)
        out = []
        for spec in specs:
            per = []
            for sg in sigmas:
                traj = cocoa_iterates(td.A, y, spec, _config(plan, lam=plan.lambdas[0], sigma=sg))
                per.append((td.mse(traj.estimates),
                            iterations_to_tolerance(traj.estimates, traj.final, plan.tolerance)))
            out.append(per)
        return out

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "t", "subproblem", "mean_mse", "median_iterations_to_tol"),
                        provenance=_provenance(plan, shared))
    for j, spec in enumerate(specs):
        for m, sg in enumerate(sigmas):
            curves = np.array([r[j][m][0] for r in res])
            its = float(np.median([r[j][m][1] for r in res]))
            for t in range(curves.shape[1]):
                table.add(spec.sizes[0], t, sg, float(np.mean(curves[:, t])), its)
    return table


def mc_average_check(plan: ExperimentPlan) -> ReportTable:
    """Median-of-means estimate of E[kappa(x^1)] against the closed form."""
    if plan.model != "iso":
        raise PreconditionError("the average-error check needs isotropic Gaussian regressors")
    specs = partition_list(plan)
    for spec in specs:
        close = [p for p in spec.sizes if abs(p - plan.n) < 10]
        if close:
            raise PreconditionError(
                f"partition {spec.sizes}: block sizes {close} lie within 10 of n={plan.n}; the error has "
                "infinite or very heavy-tailed variance there and a Monte Carlo estimate is meaningless")
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    shared = make_shared(plan, shared_seed)
    noise = plan.noise_variances[0]
    cfg = _config(plan, lam=0.0, iterations=1)
    truths = [fixed_truth(plan, shared, spec) for spec in specs]

    def one(i, seed):
        td = make_trial(plan, shared, seed, test=False)
        out = []
        for spec, x in zip(specs, truths):
            y = td.A @ x + (math.sqrt(noise) * td.w0 if noise > 0 else 0.0)
            e = x - cocoa_iterates(td.A, y, spec, cfg, record=False).final
            out.append(float(e @ e))
        return out

    res = map_trials(one, seeds, plan.workers)
    table = ReportTable(("p1", "partition", "mc_estimate", "analytic", "rel_error", "trials"),
                        provenance=_provenance(plan, shared, estimator=f"median of means, {MOM_BLOCKS} blocks"))
    for j, (spec, x) in enumerate(zip(specs, truths)):
        mc = median_of_means([r[j] for r in res])
        norms = [float(np.sum(x[s] ** 2)) for s in spec.slices()]
        an = theory.avg_gen_error(theory.PartitionDims(plan.n, spec.sizes), norms, plan.n * noise).total
        rel = abs(mc - an) / an if an > 0 else abs(mc - an)
        table.add(spec.sizes[0], list(spec.sizes), mc, an, rel, plan.trials)
    return table


# --------------------------------------------------------------------------
# bound coverage


def _q_default(plan: ExperimentPlan, dims: theory.PartitionDims) -> tuple[list[float], list[float]]:
    """q (and q_bar) meeting plan.rho_target when the plan does not fix them."""
    K, rho = dims.K, plan.rho_target
    if plan.bound in ("theorem1", "lemma3"):
        q = plan.q or [theory.q_for_probability(rho, K)] * K
        return list(q), [0.0] * K
    nb = len(dims.broad_set) if plan.bound in ("theorem2", "theorem3") else 0
    # split the failure budget evenly over the tail terms
    share = (1.0 - rho) / (K + nb)
    q = plan.q or [math.log(2.0 / share)] * K
    if plan.q_bar:
        qb = plan.q_bar
    elif plan.bound == "theorem2":
        qb = [math.sqrt(2.0 * math.log(2.0 / share))] * K
    else:
        qb = [math.sqrt(math.log(2.0 / share))] * K
    return list(q), list(qb)


def compute_bound(plan: ExperimentPlan, spec: PartitionSpec, cov: np.ndarray, L=None) -> theory.BoundResult:
    dims = theory.PartitionDims(plan.n, spec.sizes)
    q, qb = _q_default(plan, dims)
    kind = plan.bound
    if kind == "theorem1":
        return theory.beta_iso_gaussian(dims, q)
    if kind == "lemma3":
        return theory.beta_iso_gaussian_tall(dims, q)
    spectra = theory.block_spectra(cov, spec.sizes)
    inp = theory.BoundInputs(dims, q, qb, plan.C, L, spectra)
    if kind == "theorem2":
        return theory.beta_corr_gaussian(inp)
    if kind == "lemma6":
        return theory.beta_corr_gaussian_tall(inp)
    if kind == "theorem3":
        return theory.beta_sub_gaussian(inp)
    if kind == "theorem4":
        return theory.beta_sub_gaussian_tall(inp)
    raise ValidationError(f"no norm bound named {kind!r}")


def _coverage_model(plan: ExperimentPlan, shared_seed):
    rng = np.random.default_rng(shared_seed)
    kind = plan.bound
    if kind in ("theorem1", "lemma3"):
        return datagen.IsoGaussian(plan.p), np.eye(plan.p)
    if kind in ("theorem2", "lemma6") or plan.model == "corr":
        cov = datagen.build_decaying_covariance(plan.p, plan.decay_ratio, rng)
        return datagen.CorrGaussian(cov), cov
    if plan.model == "bern":
        return datagen.Bernoulli(plan.p), np.eye(plan.p)
    return datagen.IsoGaussian(plan.p), np.eye(plan.p)


def _refuse_if_vacuous(rho: float) -> None:
    if rho <= 0.0:
        raise PreconditionError("success probability is 0 for this configuration; the coverage check is vacuous")
    if rho < 0.5:
        raise PreconditionError(f"success probability {rho:.4g} is below 0.5; choose larger q or dimensions")


def bound_coverage_check(plan: ExperimentPlan, bound_kind: str | None = None) -> ReportTable:
    if bound_kind is not None:
        plan = ExperimentPlan(**{**plan.echo(), "bound": bound_kind}).validate()
    shared_seed, seeds = trial_seeds(plan.seed, plan.trials)
    table_head = ("bound", "partition", "beta", "rho", "empirical_coverage", "trials", "vacuous")

    if plan.bound == "lemma2":
        q = plan.q[0] if plan.q else math.sqrt(-2.0 * math.log((1.0 - plan.rho_target) / 2.0))
        lo, hi, rho = theory.tracy_widom_interval(plan.n, plan.p, q)
        _refuse_if_vacuous(rho)

        def one(i, seed):
            s = np.linalg.svd(np.random.default_rng(seed).standard_normal((plan.n, plan.p)), compute_uv=False)
            return bool(s[-1] >= lo and s[0] <= hi)

        hits = map_trials(one, seeds, plan.workers)
        table = ReportTable(table_head, provenance=_provenance(plan, interval=[lo, hi], q=q))
        table.add("lemma2", [plan.n, plan.p], hi, rho, float(np.mean(hits)), plan.trials, False)
        return table

    model, cov = _coverage_model(plan, shared_seed)
    specs = partition_list(plan)
    L = None
    if plan.bound in ("theorem3", "theorem4"):
        if plan.L:
            L = list(plan.L) if len(plan.L) > 1 else [plan.L[0]] * plan.K
        elif isinstance(model, (datagen.IsoGaussian, datagen.CorrGaussian)):
            L = [theory.GAUSS_L] * plan.K
        else:
            rows = datagen.sample_regressors(model, 20000, np.random.default_rng(shared_seed))
            L = [theory.estimate_subgaussian_constant(rows, cov)] * plan.K
    bounds = [compute_bound(plan, spec, cov, L) for spec in specs]
    for b in bounds:
        _refuse_if_vacuous(b.rho)

    def one(i, seed):
        A = datagen.sample_regressors(model, plan.n, np.random.default_rng(seed))
        return [spectral_norm(iteration_matrix(A, spec).B) for spec in specs]

    norms = map_trials(one, seeds, plan.workers)
    table = ReportTable(table_head, provenance=_provenance(plan, L=L))
    for j, (spec, b) in enumerate(zip(specs, bounds)):
        cover = float(np.mean([nb[j] <= b.beta for nb in norms]))
        table.add(plan.bound, list(spec.sizes), b.beta, b.rho, cover, plan.trials, math.isinf(b.beta))
    return table


def abar_a_check(A, spec: PartitionSpec) -> tuple[float, float]:
    """(measured ||Abar A||^2, right-hand side of the block bound) for one instance."""
    op = iteration_matrix(A, spec)
    measured = spectral_norm(op.Abar @ np.asarray(A, dtype=float)) ** 2
    blocks = datagen.partition_columns(A, spec)
    rhs = theory.abar_a_bound_rhs([spectral_norm(b) for b in blocks], [min_nonzero_singular(b) for b in blocks])
    return measured, rhs


_DISPATCH = {
    "partition_sweep": partition_sweep,
    "spectral": spectral_study,
    "convergence": convergence_study,
    "noise": noise_study,
    "regularization": regularization_study,
    "hyperparam": hyperparam_study,
    "mc_average": mc_average_check,
    "bound_coverage": bound_coverage_check,
}


def run_experiment(plan: ExperimentPlan) -> ReportTable:
    plan.validate()
    return _DISPATCH[plan.study](plan)

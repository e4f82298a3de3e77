"""End-to-end acceptance checks at the stated tolerances.

Each test records a single verdict line (see conftest) and then asserts.
"""

from __future__ import annotations

import math
import time

import numpy as np

from cocoagen import cocoa, datagen, theory
from cocoagen.cocoa import CocoaConfig
from cocoagen.datagen import Bernoulli, CorrGaussian, IsoGaussian, PartitionSpec
from cocoagen.harness import ExperimentPlan, run_experiment
from cocoagen.harness.studies import abar_a_check, iterations_to_tolerance, trial_seeds


def iso_set(n, p, seed, noise=0.0):
    shared, (ts,) = trial_seeds(seed, 1)
    x = datagen.sample_ground_truth(p, np.random.default_rng(shared))
    return datagen.synthesize(IsoGaussian(p), x, n, noise, np.random.default_rng(ts))


def test_01_projection_all_broad(verdict):
    spec = PartitionSpec([25, 30, 35])
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        ts = iso_set(20, 90, seed)
        op = cocoa.iteration_matrix(ts.regressors, spec)
        worst = max(worst, cocoa.projection_defect(op.B))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 5.0
    verdict("01 B is a projection (all blocks broad)", ok, f"max defect {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_02_one_step_convergence(verdict):
    spec = PartitionSpec([25, 30, 35])
    worst = 0.0
    for seed in range(20):
        ts = iso_set(20, 90, seed)
        traj = cocoa.run_cocoa(ts, spec, CocoaConfig(iterations=50))
        dev = np.linalg.norm(traj.estimates[2:] - traj.estimates[1], axis=1).max()
        worst = max(worst, dev)
    ok = worst <= 1e-10
    verdict("02 iterate constant after one step", ok, f"max ||x^t - x^1|| {worst:.2e}")
    assert ok


def test_03_solver_matches_recursion(verdict):
    spec = PartitionSpec([10, 40])
    worst = 0.0
    for seed in range(10):
        ts = iso_set(30, 50, seed, noise=0.5)
        cfg = CocoaConfig(lam=0.0, aggregation=1.0, subproblem=2.0, iterations=100)
        traj = cocoa.run_cocoa(ts, spec, cfg)
        rec = cocoa.recursion_trajectory(cocoa.iteration_matrix(ts.regressors, spec), ts.observations, 100)
        worst = max(worst, float(np.abs(traj.estimates - rec).max()))
    ok = worst < 1e-9
    verdict("03 solver equals affine recursion", ok, f"max deviation {worst:.2e}")
    assert ok


def test_04_training_error_zero(verdict):
    ts = iso_set(75, 200, 0)
    traj = cocoa.run_cocoa(ts, PartitionSpec([100, 100]), CocoaConfig(iterations=50))
    rel = cocoa.training_error(ts.regressors, ts.ground_truth, traj.final) / np.mean(ts.observations**2)
    worst_sweep = 0.0
    for p1 in range(1, 200):
        tr = cocoa.run_cocoa(ts, PartitionSpec([p1, 200 - p1]), CocoaConfig(iterations=1000), record=False)
        worst_sweep = max(worst_sweep, cocoa.training_error(ts.regressors, ts.ground_truth, tr.final))
    ok = rel < 1e-18 and worst_sweep < 1e-18
    verdict("04 training error vanishes", ok, f"broad relative {rel:.2e}, sweep max {worst_sweep:.2e}")
    assert ok


def test_05_centralized_baseline(verdict):
    start = time.perf_counter()
    shared, seeds = trial_seeds(2024, 200)
    x = datagen.sample_ground_truth(200, np.random.default_rng(shared))
    kappas = []
    for s in seeds:
        ts = datagen.synthesize(IsoGaussian(200), x, 75, 0.0, np.random.default_rng(s))
        xc = cocoa.centralized_solve(ts.regressors, ts.observations)
        kappas.append(theory.generalization_error(x, xc, np.eye(200)))
    mean = float(np.mean(kappas))
    elapsed = time.perf_counter() - start
    ok = 0.58 <= mean <= 0.67 and elapsed < 60
    verdict("05 centralized min-norm error", ok, f"mean kappa {mean:.4f} (expect ~0.625), {elapsed:.1f}s")
    assert ok


def test_06_average_error_formula(verdict):
    # by hand: gamma = (20/39, 20/59); alpha_1 = (4 - 3/3 + 20/59)/4, alpha_2 = (4 - 3/4 + 20/39)/4
    hand = 0.5 * (4 - 1 + 20 / 59) / 4 + 0.5 * (4 - 0.75 + 20 / 39) / 4
    assert abs(hand - 0.8877) < 1e-4
    start = time.perf_counter()
    plan = ExperimentPlan(study="mc_average", n=20, p=140, K=2, partition=[60, 80], trials=5000,
                          equal_block_energy=True, seed=11)
    rec = run_experiment(plan).records()[0]
    elapsed = time.perf_counter() - start
    ok = abs(rec["analytic"] - hand) < 1e-12 and rec["rel_error"] < 0.05 and elapsed < 120
    verdict("06 average error matches Monte Carlo", ok,
            f"MC {rec['mc_estimate']:.4f} vs {rec['analytic']:.4f} (rel {rec['rel_error']:.3%}), {elapsed:.1f}s")
    assert ok


def _peak_ratio(model: str, **kw) -> tuple[float, float, float]:
    base = dict(study="partition_sweep", model=model, n=75, p=200, K=2, p1_values=[25, 75], trials=50, seed=7)
    base.update(kw)
    t = run_experiment(ExperimentPlan(**base))
    low, peak = t.column("median_mse")
    return low, peak, peak / low


def _check_peak(verdict, model, label):
    low, peak, ratio = _peak_ratio(model)
    ok = ratio >= 100
    verdict(f"07 peak ratio ({label})", ok, f"median MSE {peak:.4g} at p1=75 vs {low:.4g} at p1=25, ratio {ratio:.1f}")
    assert ok


def test_07a_peak_isotropic(verdict):
    _check_peak(verdict, "iso", "isotropic Gaussian")


def test_07b_peak_correlated(verdict):
    _check_peak(verdict, "corr", "correlated Gaussian")


def test_07c_peak_bernoulli(verdict):
    _check_peak(verdict, "bern", "Bernoulli")


def test_07d_peak_random_features(verdict):
    low, peak, ratio = _peak_ratio("features", n=100, p=300, p1_values=[25, 100], trials=20)
    ok = ratio >= 10
    verdict("07 peak ratio (random features, synthetic corpus)", ok,
            f"median MSE {peak:.4g} at p1=100 vs {low:.4g} at p1=25, ratio {ratio:.1f}")
    assert ok


def test_08_theorem_bound_coverage(verdict):
    plan = ExperimentPlan(study="bound_coverage", bound="theorem1", n=40, p=22, K=2, partition=[10, 12],
                          rho_target=0.9, trials=2000, seed=5)
    rec = run_experiment(plan).records()[0]
    ok = math.isfinite(rec["beta"]) and rec["empirical_coverage"] >= rec["rho"] - 0.03
    verdict("08 norm bound coverage (isotropic)", ok,
            f"beta {rec['beta']:.3f}, rho {rec['rho']:.3f}, coverage {rec['empirical_coverage']:.4f}")
    assert ok


def test_09_singular_value_interval(verdict):
    plan = ExperimentPlan(study="bound_coverage", bound="lemma2", n=200, p=50, q=[3.0], trials=2000, seed=6)
    rec = run_experiment(plan).records()[0]
    need = 1 - 2 * math.exp(-4.5) - 0.02
    ok = rec["empirical_coverage"] >= need
    verdict("09 extreme singular value interval", ok, f"coverage {rec['empirical_coverage']:.4f} >= {need:.4f}")
    assert ok


def test_10_abar_a_bound(verdict):
    rng = np.random.default_rng(10)
    violations, kinds = 0, set()
    slack = 1e-10  # relative float tolerance; the identity case is an exact equality
    for i in range(1000):
        n = int(rng.integers(3, 25))
        K = int(rng.integers(1, 5))
        regime = ["tall", "broad", "mixed"][i % 3]
        if regime == "tall":
            sizes = rng.integers(1, n + 1, K)
        elif regime == "broad":
            sizes = rng.integers(n, 2 * n + 5, K)
        else:
            sizes = np.where(rng.random(K) < 0.5, rng.integers(1, n + 1, K), rng.integers(n, 2 * n + 5, K))
        spec = PartitionSpec(sizes)
        model_kind = ["iso", "corr", "bern"][(i // 3) % 3]
        if model_kind == "iso":
            model = IsoGaussian(spec.p)
        elif model_kind == "corr":
            model = CorrGaussian(datagen.build_decaying_covariance(spec.p, 0.9631, rng))
        else:
            model = Bernoulli(spec.p)
        kinds.add((regime, model_kind))
        A = datagen.sample_regressors(model, n, rng)
        measured, rhs = abar_a_check(A, spec)
        if measured > rhs * (1 + slack):
            violations += 1
    ok = violations == 0 and len(kinds) == 9
    verdict("10 block pseudoinverse product bound", ok, f"{violations} violations over 1000 instances")
    assert ok


def test_11_ridge_convergence(verdict):
    ts = iso_set(30, 50, 3, noise=0.5)
    traj = cocoa.run_cocoa(ts, PartitionSpec([10, 40]), CocoaConfig(lam=0.1, iterations=50_000), record=False)
    xc = cocoa.centralized_solve(ts.regressors, ts.observations, 0.1)
    rel = np.linalg.norm(traj.final - xc) / np.linalg.norm(xc)
    ok = rel < 1e-6
    verdict("11 ridge iterate reaches centralized solution", ok, f"relative error {rel:.2e}")
    assert ok


def test_12_hyperparameter_ordering(verdict):
    spec = PartitionSpec([10, 40])
    ok, details = True, []
    for seed in range(5):
        ts = iso_set(30, 50, seed)
        finals, its = [], []
        for sigma in (2.0, 4.0, 8.0):
            traj = cocoa.run_cocoa(ts, spec, CocoaConfig(aggregation=1.0, subproblem=sigma, iterations=3000))
            finals.append(traj.final)
            its.append(iterations_to_tolerance(traj.estimates, traj.final, 1e-6))
        spread = max(np.linalg.norm(f - finals[0]) for f in finals)
        good = spread < 1e-6 and 0 <= its[0] <= its[1] <= its[2]
        ok &= good
        details.append(f"{its}/{spread:.0e}")
    verdict("12 larger subproblem parameter converges no faster", ok, "iterations/spread per seed " + ", ".join(details))
    assert ok


def test_13_gaussian_specialisation(verdict):
    rng = np.random.default_rng(13)
    mismatches = 0
    g = theory.GAUSS_L
    for _ in range(100):
        n = int(rng.integers(20, 500))
        K = int(rng.integers(1, 5))
        sizes = rng.integers(1, n + 1, K)  # all blocks tall
        spectra = [tuple(sorted(rng.uniform(0.05, 4.0, 2), reverse=True)) for _ in range(K)]
        inp = theory.BoundInputs(theory.PartitionDims(n, sizes), rng.uniform(0, 6, K),
                                 C=float(rng.uniform(1e-4, 1.0)), L=[g] * K, spectra=spectra)
        a, b = theory.beta_sub_gaussian(inp), theory.beta_corr_gaussian(inp)
        if not (a.beta == b.beta and a.rho == b.rho):
            mismatches += 1
    ok = mismatches == 0
    verdict("13 sub-gaussian bound with Gaussian constant", ok, f"{mismatches} mismatches over 100 grid points")
    assert ok

"""Declarative experiment description and its validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

STUDIES = (
    "partition_sweep",
    "spectral",
    "convergence",
    "noise",
    "regularization",
    "hyperparam",
    "mc_average",
    "bound_coverage",
)
MODELS = ("iso", "corr", "bern", "features")
BOUNDS = ("theorem1", "lemma3", "theorem2", "lemma6", "theorem3", "theorem4", "lemma2")


@dataclass
class ExperimentPlan:
    study: str = "partition_sweep"
    model: str = "iso"
    n: int = 75
    p: int = 200
    K: int = 2
    p1_values: list[int] = field(default_factory=list)  # empty -> 1..p-K+1
    partition: list[int] = field(default_factory=list)  # explicit split, overrides p1_values
    trials: int = 100
    test_rows: int | None = None  # None -> 100 n
    iterations: int = 1000
    checkpoints: list[int] = field(default_factory=list)  # empty -> [iterations]
    seed: int = 0
    noise_variances: list[float] = field(default_factory=lambda: [0.0])
    lambdas: list[float] = field(default_factory=lambda: [0.0])
    aggregation: float = 1.0
    subproblems: list[float] = field(default_factory=list)  # empty -> [K]
    decay_ratio: float = 0.9631
    equal_block_energy: bool = False
    # bounds
    bound: str = "theorem1"
    q: list[float] = field(default_factory=list)
    q_bar: list[float] = field(default_factory=list)
    rho_target: float = 0.9
    C: float = 1.0
    L: list[float] = field(default_factory=list)
    # random features
    mnist_dir: str | None = None
    subsample_factor: int = 60
    corpus_size: int = 2000
    freq_scale: float = 0.2
    scale_pixels: bool = True
    # execution
    workers: int = 1
    tolerance: float = 1e-6

    @property
    def n_test(self) -> int:
        return 100 * self.n if self.test_rows is None else self.test_rows

    def sweep_p1(self) -> list[int]:
        if self.p1_values:
            return list(self.p1_values)
        return list(range(1, self.p - self.K + 2))

    def sigma_values(self) -> list[float]:
        return list(self.subproblems) if self.subproblems else [float(self.K) * self.aggregation]

    def checkpoint_list(self) -> list[int]:
        return sorted(set(self.checkpoints)) if self.checkpoints else [self.iterations]

    def validate(self) -> "ExperimentPlan":
        err = []
        if self.study not in STUDIES:
            err.append(f"unknown study {self.study!r}; choose from {STUDIES}")
        if self.model not in MODELS:
            err.append(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.bound not in BOUNDS:
            err.append(f"unknown bound {self.bound!r}; choose from {BOUNDS}")
        if self.n < 1 or self.p < 1 or self.K < 1:
            err.append("n, p and K must be positive")
        if self.K > self.p:
            err.append("K cannot exceed p")
        if self.trials < 1:
            err.append("trials must be at least 1")
        if self.n_test < 1:
            err.append("test_rows must be at least 1")
        if self.iterations < 0:
            err.append("iterations must be nonnegative")
        if any(c < 0 or c > self.iterations for c in self.checkpoints):
            err.append("checkpoints must lie in [0, iterations]")
        if self.partition:
            if len(self.partition) != self.K or any(s < 1 for s in self.partition) or sum(self.partition) != self.p:
                err.append(f"partition {self.partition} must have K={self.K} positive sizes summing to p={self.p}")
        elif self.study != "bound_coverage" or self.bound != "lemma2":
            for p1 in self.p1_values:
                if not 1 <= p1 <= self.p - (self.K - 1) or (self.K == 1 and p1 != self.p):
                    err.append(f"p1={p1} is outside the valid range for p={self.p}, K={self.K}")
        if any(v < 0 for v in self.noise_variances) or not self.noise_variances:
            err.append("noise variances must be a nonempty list of nonnegative values")
        if any(v < 0 for v in self.lambdas) or not self.lambdas:
            err.append("lambdas must be a nonempty list of nonnegative values")
        if not 0 < self.aggregation <= 1:
            err.append("aggregation must lie in (0, 1]")
        if any(s <= 0 for s in self.subproblems):
            err.append("subproblem values must be positive")
        if not 0 < self.decay_ratio <= 1:
            err.append("decay_ratio must lie in (0, 1]")
        if not 0 < self.rho_target < 1:
            err.append("rho_target must lie in (0, 1)")
        if self.C <= 0:
            err.append("C must be positive")
        if any(v < 1 for v in self.L):
            err.append("sub-gaussian constants L must be >= 1")
        if any(v < 0 for v in self.q) or any(v < 0 for v in self.q_bar):
            err.append("q values must be nonnegative")
        if self.workers < 1:
            err.append("workers must be at least 1")
        if self.subsample_factor < 1 or self.corpus_size < 1:
            err.append("subsample_factor and corpus_size must be positive")
        if err:
            raise ValidationError("; ".join(err))
        return self

    def echo(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentPlan)}


def plan_from_mapping(data: dict, base: ExperimentPlan | None = None) -> ExperimentPlan:
    unknown = set(data) - _FIELDS
    if unknown:
        raise ValidationError(f"unknown plan keys: {sorted(unknown)}")
    base = base or ExperimentPlan()
    try:
        return dataclasses.replace(base, **data)
    except TypeError as exc:  # pragma: no cover
        raise ValidationError(str(exc)) from None


def load_plan(path) -> ExperimentPlan:
    """Read a TOML file whose keys mirror the ExperimentPlan fields."""
    with open(Path(path), "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return plan_from_mapping(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def dump_plan(plan: ExperimentPlan) -> str:
    lines = []
    for k, v in plan.echo().items():
        if v is None:
            continue
        lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"

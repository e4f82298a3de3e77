"""Feature-partitioned CoCoA for least squares, plus its linear dynamics.

The solver is written as a small coordinator/worker state machine: the
coordinator broadcasts the mean share, every node answers with its new share,
and the coordinator averages. Node updates inside a round are independent, so
they may run on a thread pool; the averaging is done in node order, which
keeps results identical to the sequential schedule.

Observations may be a vector (n,) or a matrix (n, m); in the latter case the
m right-hand sides are solved together (used for one-vs-rest labels).
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numkern
from .datagen import PartitionSpec, TrainingSet, partition_columns
from .errors import InvalidInputError, ValidationError

try:  # python < 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class CocoaConfig:
    lam: float = 0.0
    aggregation: float = 1.0
    subproblem: float | None = None  # None -> K at run time
    iterations: int = 100
    early_stop: float | None = None  # stop once ||dx|| drops below this
    pinv_tol: float = numkern.DEFAULT_TOL
    smoothness: float = field(default=1.0, init=False)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError("lambda must be nonnegative")
        if not 0 < self.aggregation <= 1:
            raise ValidationError("aggregation must lie in (0, 1]")
        if self.subproblem is not None and not self.subproblem > 0:
            raise ValidationError("subproblem parameter must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValidationError("iterations must be a nonnegative integer")
        if self.early_stop is not None and self.early_stop < 0:
            raise ValidationError("early-stop tolerance must be nonnegative")

    def sigma(self, K: int) -> float:
        return float(K) * self.aggregation if self.subproblem is None else float(self.subproblem)

    def resolved(self, K: int) -> "CocoaConfig":
        return CocoaConfig(self.lam, self.aggregation, self.sigma(K), self.iterations,
                           self.early_stop, self.pinv_tol)


@dataclass(frozen=True)
class NodeState:
    node_id: int
    estimate: np.ndarray  # x_k
    share: np.ndarray  # v_k


@dataclass(frozen=True)
class CoordinatorState:
    mean_share: np.ndarray
    iteration: int = 0


# messages between coordinator and nodes
@dataclass(frozen=True)
class Broadcast:
    iteration: int
    mean_share: np.ndarray


@dataclass(frozen=True)
class ShareUpdate:
    node_id: int
    iteration: int
    share: np.ndarray
    step_sq: float  # ||dx_k||^2, for the optional early stop


def aggregate(shares) -> np.ndarray:
    shares = list(shares)
    if not shares:
        raise InvalidInputError("cannot aggregate an empty list of shares")
    first = np.asarray(shares[0], dtype=float)
    acc = first.copy()
    for s in shares[1:]:
        s = np.asarray(s, dtype=float)
        if s.shape != first.shape:
            raise InvalidInputError("shares must have equal shapes")
        acc += s
    return acc / len(shares)


def local_solve_operator(A_k, sigma: float, lam: float, tol: float = numkern.DEFAULT_TOL) -> np.ndarray:
    """(sigma A_k^T A_k + lam I)^+ assembled from the SVD of A_k.

    Eigenvalues are sigma*s^2 + lam on the row space of A_k and lam on its
    complement. The rank of A_k is decided on s itself, which avoids squaring
    its condition number; the complement is kept only when lam clears the
    same relative cutoff the pseudoinverse of the full matrix would apply.
    """
    f = numkern.svd(A_k)
    keep = f.singular_values > f.cutoff(tol)
    V = f.right[:, keep]
    ev = sigma * f.singular_values[keep] ** 2 + lam
    op = (V / ev) @ V.T
    p_k = f.right.shape[0]
    top = ev[0] if ev.size else lam
    if lam > tol * top * p_k and V.shape[1] < p_k:
        op += (np.eye(p_k) - V @ V.T) / lam
    return op


def _check_local(node: NodeState, mean_share, y, A_k):
    A_k = np.asarray(A_k, dtype=float)
    n, p_k = A_k.shape
    if np.shape(y)[0] != n or np.shape(mean_share) != np.shape(y):
        raise InvalidInputError("observations and mean share must have n rows matching A_k")
    if node.estimate.shape[0] != p_k or node.share.shape != np.shape(y):
        raise InvalidInputError("node state does not match the block dimensions")
    return A_k


def local_update(node: NodeState, mean_share, y, A_k, config: CocoaConfig, K: int,
                 solve_op: np.ndarray | None = None) -> NodeState:
    """One node step: solve the local quadratic model and refresh the share."""
    A_k = _check_local(node, mean_share, y, A_k)
    sigma = config.sigma(K)
    if solve_op is None:
        solve_op = local_solve_operator(A_k, sigma, config.lam, config.pinv_tol)
    c = config.lam * node.estimate - A_k.T @ (y - mean_share)
    dx = -(solve_op @ c)
    g = config.aggregation
    return NodeState(node.node_id, node.estimate + g * dx, mean_share + g * K * (A_k @ dx))


class CocoaNode:
    """Worker holding one column block and its cached local solve."""

    def __init__(self, node_id: int, A_k: np.ndarray, y: np.ndarray, config: CocoaConfig, K: int):
        self.node_id = node_id
        self.A = A_k
        self.y = y
        self.K = K
        self.config = config
        sigma = config.sigma(K)
        self._op = local_solve_operator(A_k, sigma, config.lam, config.pinv_tol)
        self._gain = self._op @ A_k.T  # dx = gain (y - vbar) - lam op x_k
        self._ridge = config.lam * self._op if config.lam > 0 else None
        shape = (A_k.shape[1],) + y.shape[1:]
        self.state = NodeState(node_id, np.zeros(shape), np.zeros_like(y))

    def handle(self, msg: Broadcast) -> ShareUpdate:
        x_k = self.state.estimate
        dx = self._gain @ (self.y - msg.mean_share)
        if self._ridge is not None:
            dx -= self._ridge @ x_k
        g = self.config.aggregation
        new = NodeState(self.node_id, x_k + g * dx, msg.mean_share + (g * self.K) * (self.A @ dx))
        self.state = new
        return ShareUpdate(self.node_id, msg.iteration, new.share, float(np.sum(dx * dx)))


class Coordinator:
    def __init__(self, n_shape):
        self.state = CoordinatorState(np.zeros(n_shape), 0)

    def broadcast(self) -> Broadcast:
        return Broadcast(self.state.iteration, self.state.mean_share)

    def collect(self, updates: list[ShareUpdate]) -> None:
        ordered = sorted(updates, key=lambda u: u.node_id)
        self.state = CoordinatorState(aggregate([u.share for u in ordered]), self.state.iteration + 1)


@dataclass
class SolveTrajectory:
    estimates: np.ndarray  # (T+1, p) or (T+1, p, m)
    config: CocoaConfig
    partition: PartitionSpec
    stopped_early: bool = False

    @property
    def final(self) -> np.ndarray:
        return self.estimates[-1]

    @property
    def iterations(self) -> int:
        return self.estimates.shape[0] - 1

    def __len__(self):
        return self.estimates.shape[0]

    def __getitem__(self, t):
        return self.estimates[t]


def _prepare(A, y, spec: PartitionSpec):
    A = numkern.as_matrix(A, "regressors")
    y = np.asarray(y, dtype=float)
    if y.ndim not in (1, 2) or y.shape[0] != A.shape[0]:
        raise InvalidInputError(f"observations shape {y.shape} does not match {A.shape[0]} rows")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("observations have non-finite entries")
    spec.check(A.shape[1])
    return A, y


def cocoa_iterates(A, y, spec: PartitionSpec, config: CocoaConfig, workers: int = 1,
                   record: bool = True) -> SolveTrajectory:
    """Run the solver on raw arrays. ``record=False`` keeps only x^0 and x^T."""
    A, y = _prepare(A, y, spec)
    K = spec.K
    if config.subproblem is not None and config.subproblem < config.aggregation * K:
        warnings.warn(f"subproblem parameter {config.subproblem} is below aggregation*K = "
                      f"{config.aggregation * K}; convergence is not guaranteed", stacklevel=2)
    nodes = [CocoaNode(k, A_k, y, config, K) for k, A_k in enumerate(partition_columns(A, spec))]
    coord = Coordinator(y.shape)
    T = int(config.iterations)

    def snapshot():
        return np.concatenate([nd.state.estimate for nd in nodes], axis=0)

    history = [snapshot()]
    stopped = False
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and K > 1 else None
    try:
        for _ in range(T):
            msg = coord.broadcast()
            if pool is None:
                updates = [nd.handle(msg) for nd in nodes]
            else:
                updates = list(pool.map(lambda nd: nd.handle(msg), nodes))
            coord.collect(updates)  # barrier
            if record:
                history.append(snapshot())
            if config.early_stop is not None and np.sqrt(sum(u.step_sq for u in updates)) < config.early_stop:
                stopped = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not record:
        history.append(snapshot())
    return SolveTrajectory(np.array(history), config.resolved(K), spec, stopped)


def run_cocoa(data: TrainingSet, spec: PartitionSpec, config: CocoaConfig, workers: int = 1,
              record: bool = True) -> SolveTrajectory:
    return cocoa_iterates(data.regressors, data.observations, spec, config, workers, record)


# --------------------------------------------------------------------------
# linear dynamics


@dataclass(frozen=True)
class IterationOperator:
    B: np.ndarray  # p x p
    Abar: np.ndarray  # p x n, row blocks are pinv(A_k)
    partition: PartitionSpec

    @property
    def K(self) -> int:
        return self.partition.K


def iteration_matrix(A, spec: PartitionSpec, tol: float = numkern.DEFAULT_TOL) -> IterationOperator:
    A = numkern.as_matrix(A, "regressors")
    blocks = partition_columns(A, spec)
    Abar = np.vstack([numkern.pseudoinverse(Ak, tol) for Ak in blocks])
    B = np.eye(A.shape[1]) - (Abar @ A) / spec.K
    return IterationOperator(B, Abar, spec)


def step_recursion(current, op: IterationOperator, y, K: int) -> np.ndarray:
    current = np.asarray(current, dtype=float)
    y = np.asarray(y, dtype=float)
    if current.shape[0] != op.B.shape[0] or y.shape[0] != op.Abar.shape[1]:
        raise InvalidInputError("dimensions do not match the iteration operator")
    return op.B @ current + (op.Abar @ y) / K


def recursion_trajectory(op: IterationOperator, y, T: int) -> np.ndarray:
    """x^0 = 0 followed by T applications of the affine recursion."""
    y = np.asarray(y, dtype=float)
    K = op.K
    xs = [np.zeros((op.B.shape[0],) + y.shape[1:])]
    for _ in range(T):
        xs.append(step_recursion(xs[-1], op, y, K))
    return np.array(xs)


def error_decomposition(op: IterationOperator, t: int, x, w, K: int) -> np.ndarray:
    """B^t x - R_t w with R_t = (1/K) sum_{i<t} B^i Abar."""
    if t < 0:
        raise InvalidInputError("t must be nonnegative")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    Btx = x.copy()
    term = op.Abar @ w
    acc = np.zeros_like(Btx)
    for _ in range(t):
        acc += term
        term = op.B @ term
        Btx = op.B @ Btx
    return Btx - acc / K


def centralized_solve(A, y, lam: float = 0.0, tol: float = numkern.DEFAULT_TOL) -> np.ndarray:
    """(A^T A + lam I)^+ A^T y."""
    A = numkern.as_matrix(A, "regressors")
    y = np.asarray(y, dtype=float)
    if y.shape[0] != A.shape[0]:
        raise InvalidInputError("observations do not match the regressor rows")
    if lam < 0:
        raise InvalidInputError("lambda must be nonnegative")
    # same SVD route as the local solves: eigenvalues s^2 + lam
    return local_solve_operator(A, 1.0, lam, tol) @ (A.T @ y)


def training_error(A, x, estimate) -> float:
    A = np.asarray(A, dtype=float)
    r = A @ (np.asarray(x, dtype=float) - np.asarray(estimate, dtype=float))
    return float(np.sum(r * r) / A.shape[0])


def is_projection(B, tol: float = 1e-8) -> bool:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise InvalidInputError("projection test needs a square matrix")
    return bool(np.linalg.norm(B @ B - B) <= tol * max(1.0, np.linalg.norm(B)))


def projection_defect(B) -> float:
    B = np.asarray(B, dtype=float)
    return float(np.linalg.norm(B @ B - B) / max(1.0, np.linalg.norm(B)))


# --------------------------------------------------------------------------
# I/O


def write_trajectory_csv(traj: SolveTrajectory, path) -> None:
    """Rows ``iteration,node,component_index,value``; component index is local to the node."""
    est = traj.estimates
    if est.ndim != 2:
        raise InvalidInputError("trajectory export supports a single right-hand side")
    slices = traj.partition.slices()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "node", "component_index", "value"])
        for t in range(est.shape[0]):
            for k, s in enumerate(slices):
                for i, v in enumerate(est[t, s]):
                    w.writerow([t, k, i, format(v, ".17g")])


def read_trajectory_csv(path, spec: PartitionSpec) -> np.ndarray:
    off = spec.offsets()
    rows = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for rec in r:
            rows.append((int(rec["iteration"]), off[int(rec["node"])] + int(rec["component_index"]),
                         float(rec["value"])))
    T = max(r[0] for r in rows) + 1
    out = np.zeros((T, spec.p))
    for t, j, v in rows:
        out[t, j] = v
    return out


_CONFIG_KEYS = ("lambda", "aggregation", "subproblem", "iterations", "seed", "partition")


def save_solver_config(path, config: CocoaConfig, spec: PartitionSpec, seed: int | None = None) -> None:
    lines = [
        f"lambda = {config.lam!r}",
        f"aggregation = {config.aggregation!r}",
    ]
    if config.subproblem is not None:
        lines.append(f"subproblem = {float(config.subproblem)!r}")
    lines.append(f"iterations = {int(config.iterations)}")
    if seed is not None:
        lines.append(f"seed = {int(seed)}")
    lines.append("partition = [" + ", ".join(str(s) for s in spec.sizes) + "]")
    Path(path).write_text("\n".join(lines) + "\n")


def load_solver_config(path) -> tuple[CocoaConfig, PartitionSpec | None, int | None]:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown keys {sorted(unknown)}")
    cfg = CocoaConfig(
        lam=float(raw.get("lambda", 0.0)),
        aggregation=float(raw.get("aggregation", 1.0)),
        subproblem=float(raw["subproblem"]) if "subproblem" in raw else None,
        iterations=int(raw.get("iterations", 100)),
    )
    spec = PartitionSpec(raw["partition"]) if "partition" in raw else None
    return cfg, spec, raw.get("seed")


def config_dict(config: CocoaConfig) -> dict:
    d = asdict(config)
    d["lambda"] = d.pop("lam")
    return d

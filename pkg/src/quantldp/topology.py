"""Directed-graph weight matrices for push-pull mixing.

``R`` (row sums zero) drives the pull graph for the decision variable and the
eigenvector-estimation variable; ``C`` (column sums zero) drives the push graph
for the gradient-tracking variable. Edge ``j -> i`` exists in the graph induced
by a matrix ``M`` iff ``M[i, j] > 0``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

SUM_TOL = 1e-12
EIG_TOL = 1e-10
# |1/(m z_ii) - 1/u_i| below this is treated as converged (float64 noise floor)
FIT_NOISE_FLOOR = 1e-13


class TopologyError(ValueError):
    """Structural problem with the weight matrices (shapes, reachability)."""


class NumericalError(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class WeightMatrices:
    R: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        C = np.array(self.C, dtype=float)
        R.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "C", C)

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass
class ValidationReport:
    failures: list[str] = field(default_factory=list)
    details: list[str] = field(default_factory=list)
    roots_R: list[int] = field(default_factory=list)
    roots_CT: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, condition: str, detail: str) -> None:
        self.failures.append(condition)
        self.details.append(f"{condition}: {detail}")

    def format(self) -> str:
        lines = ["topology: " + ("PASS" if self.passed else "FAIL")]
        lines.append(f"  spanning-tree roots in G_R:   {self.roots_R}")
        lines.append(f"  spanning-tree roots in G_C^T: {self.roots_CT}")
        lines.extend("  " + d for d in self.details)
        return "\n".join(lines)


def induced_adjacency(M: np.ndarray) -> np.ndarray:
    """Boolean adjacency ``adj[j, i]`` for the edge ``j -> i`` (``M[i, j] > 0``)."""
    adj = (np.asarray(M) > 0).T.copy()
    np.fill_diagonal(adj, False)
    return adj


def reachable_from(adj: np.ndarray, root: int) -> set[int]:
    seen = {root}
    queue = deque([root])
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(adj[j]):
            i = int(i)
            if i not in seen:
                seen.add(i)
                queue.append(i)
    return seen


def spanning_tree_roots(M: np.ndarray) -> list[int]:
    """Agents from which every agent is reachable in the graph induced by ``M``."""
    adj = induced_adjacency(M)
    m = adj.shape[0]
    return [r for r in range(m) if len(reachable_from(adj, r)) == m]


def _check_signs(report: ValidationReport, name: str, M: np.ndarray) -> None:
    off = M[~np.eye(M.shape[0], dtype=bool)]
    if np.any(off < 0):
        report.fail(f"{name}-offdiag-nonneg", f"min off-diagonal entry {off.min():.3g} < 0")
    diag = np.diag(M)
    bad = np.flatnonzero(diag >= 0)
    if bad.size:
        report.fail(f"{name}-diag-negative", f"agents {bad.tolist()} have diagonal >= 0")
    bad = np.flatnonzero(1.0 + diag <= 0)
    if bad.size:
        report.fail(f"{name}-diag-lower", f"agents {bad.tolist()} have 1 + diagonal <= 0")


def validate(W: WeightMatrices) -> ValidationReport:
    R, C = W.R, W.C
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape != C.shape:
        raise TopologyError(f"R and C must be square with equal shape, got {R.shape} and {C.shape}")
    if R.shape[0] < 2:
        raise TopologyError("need at least two agents")
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(C))):
        raise TopologyError("weight matrices contain non-finite entries")

    report = ValidationReport()
    _check_signs(report, "R", R)
    _check_signs(report, "C", C)

    rows = R.sum(axis=1)
    if np.any(np.abs(rows) > SUM_TOL):
        report.fail("R-row-sum", f"row sums {np.round(rows, 15).tolist()} not zero")
    cols = C.sum(axis=0)
    if np.any(np.abs(cols) > SUM_TOL):
        report.fail("C-col-sum", f"column sums {np.round(cols, 15).tolist()} not zero")

    report.roots_R = spanning_tree_roots(R)
    report.roots_CT = spanning_tree_roots(C.T)
    if not report.roots_R:
        report.fail("spanning-tree-G_R", "no agent reaches every other agent in G_R")
    if not report.roots_CT:
        report.fail("spanning-tree-G_CT", "no agent reaches every other agent in G_{C^T}")
    if report.roots_R and report.roots_CT and not set(report.roots_R) & set(report.roots_CT):
        report.fail("common-root", "no agent roots spanning trees in both G_R and G_{C^T}")
    return report


def _stationary(M: np.ndarray) -> np.ndarray:
    """Solve ``x^T M = 0`` with ``x^T 1 = m``; ``M`` has zero row sums."""
    m = M.shape[0]
    A = np.vstack([M.T, np.ones((1, m))])
    rhs = np.zeros(m + 1)
    rhs[-1] = m
    x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    residual = float(np.max(np.abs(A @ x - rhs)))
    if residual > EIG_TOL:
        raise NumericalError("stationary system has no consistent solution", residual)
    x[np.abs(x) < EIG_TOL] = 0.0
    if np.any(x < 0):
        raise NumericalError("eigenvector has negative entries", float(-x.min()))
    return x


def left_eigenvector(R: np.ndarray) -> np.ndarray:
    """Nonnegative ``u`` with ``u^T (I + R) = u^T`` and ``u^T 1 = m``."""
    return _stationary(np.asarray(R, dtype=float))


def right_eigenvector(C: np.ndarray) -> np.ndarray:
    """Nonnegative ``v`` with ``(I + C) v = v`` and ``1^T v = m``."""
    return _stationary(np.asarray(C, dtype=float).T)


def z_step(IR: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """One round of eigenvector estimation; row ``i`` of ``Z`` is agent ``i``'s ``z``.

    Shared by the simulator and the geometric fit so both trace the same bits.
    """
    return IR @ Z


def z_errors(R: np.ndarray, u: np.ndarray, horizon: int) -> np.ndarray:
    """``e_t = max_i |1/(m [z_t^i]_i) - 1/u_i|`` for ``t = 0..horizon``.

    Pairs with ``[z_t^i]_i <= 0`` are skipped; NaN marks a round where no agent
    contributed.
    """
    m = R.shape[0]
    IR = np.eye(m) + R
    inv_u = np.divide(1.0, u, out=np.full(m, np.inf), where=u > 0)
    Z = np.eye(m)
    errs = np.full(horizon + 1, np.nan)
    ever_positive = np.zeros(m, dtype=bool)
    for t in range(horizon + 1):
        diag = np.diag(Z)
        ok = diag > 0
        ever_positive |= ok
        if ok.any():
            errs[t] = np.max(np.abs(1.0 / (m * diag[ok]) - inv_u[ok]))
        Z = z_step(IR, Z)
    if not ever_positive.all():
        missing = np.flatnonzero(~ever_positive).tolist()
        raise TopologyError(f"agents {missing} never see their own estimate become positive")
    return errs


@dataclass(frozen=True)
class GeometricFit:
    C_z: float
    P_z: float
    horizon: int
    errors: np.ndarray
    rate_source: str  # "tail-ratio" or "spectral"

    def envelope(self, t):
        return self.C_z * self.P_z ** np.asarray(t, dtype=float)


def spectral_rate(R: np.ndarray, u: np.ndarray) -> float:
    """Spectral radius of ``I + R - 1 u^T / m``, the asymptotic z-error rate."""
    m = R.shape[0]
    B = np.eye(m) + R - np.outer(np.ones(m), u) / m
    return float(np.max(np.abs(np.linalg.eigvals(B))))


def estimate_geometric_constants(W: WeightMatrices, horizon: int) -> GeometricFit:
    if horizon < 10:
        raise ValueError("horizon must be at least 10")
    u = left_eigenvector(W.R)
    if np.any(u <= 0):
        raise TopologyError(f"left eigenvector has zero entries {np.flatnonzero(u <= 0).tolist()}; 1/u_i undefined")
    errs = z_errors(W.R, u, horizon)
    errs = np.where(errs < FIT_NOISE_FLOOR, 0.0, errs)
    observed = np.flatnonzero(np.isfinite(errs))

    positive = [t for t in observed if errs[t] > 0]
    tail = positive[len(positive) // 2:]
    ratios = [errs[t + 1] / errs[t] for t in tail if t + 1 <= horizon and errs[t + 1] > 0]
    P_z = max(ratios) if ratios else 0.0
    source = "tail-ratio"
    if not 0.0 < P_z < 1.0:
        P_z = spectral_rate(W.R, u)
        source = "spectral"
        if P_z >= 1.0:
            raise TopologyError(f"z-iteration does not contract (rate {P_z:.6f})")
    # any rate in (0, 1) is admissible once the error hits zero
    P_z = min(max(P_z, 1e-3), 1.0 - 1e-12)

    t_obs = observed.astype(float)
    C_z = float(np.max(errs[observed] / P_z ** t_obs)) if observed.size else 0.0
    return GeometricFit(C_z=C_z, P_z=float(P_z), horizon=horizon, errors=errs, rate_source=source)


def ring(m: int, weight: float = 0.3) -> WeightMatrices:
    """Directed ring ``i -> i+1`` for both graphs (doubly stochastic ``I + R``)."""
    R = np.zeros((m, m))
    for i in range(m):
        R[i, (i - 1) % m] = weight
        R[i, i] = -weight
    return WeightMatrices(R=R, C=R.T.copy())


def three_node() -> WeightMatrices:
    R = np.array([[-0.6, 0.6, 0.0], [0.0, -0.2, 0.2], [0.3, 0.0, -0.3]])
    return WeightMatrices(R=R, C=R.T.copy())


TEMPLATES = {"ring": ring, "three_node": three_node}

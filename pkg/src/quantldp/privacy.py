"""Privacy accounting for quantized gradient tracking.

Two routes are provided and cross-checked:

* empirical: a twin (shadow) copy of one agent replays the run on an adjacent
  dataset while receiving exactly the quantized messages the primary run
  received; the l1 distance between the pre-quantization states is the
  sensitivity ``Delta_t``, and ``delta_t = Delta_t / d_t`` composes additively;
* analytic: closed-form sensitivity envelopes built from the mixing weights,
  the stepsize schedule, the per-sample gradient l1 bound and the geometric
  envelope of the eigenvector estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import zeta

from . import engine
from .problems import Batch, build_problem

TWIN_READING = (
    "sensitivity is measured on pre-quantization states; the twin agent receives the "
    "primary run's quantized neighbour messages verbatim and never publishes its own"
)


@dataclass(frozen=True)
class AdjacentPerturbation:
    """Dataset ``D'`` for ``agent`` equals ``D`` except at ``round``."""

    agent: int
    round: int
    replacement: Batch
    original: Batch | None = None


@dataclass
class PrivacyLedger:
    agent: int
    perturbation_round: int
    delta_theta: list[float] = field(default_factory=list)  # indexed by t = 0..T-1
    delta_psi: list[float] = field(default_factory=list)
    d: list[float] = field(default_factory=list)

    @property
    def sensitivity(self) -> np.ndarray:
        return np.asarray(self.delta_theta) + np.asarray(self.delta_psi)

    def accumulate(self):
        return accumulate_delta(self.sensitivity, np.asarray(self.d))

    @property
    def cumulative(self) -> float:
        s = self.sensitivity
        return float(np.sum(s / np.asarray(self.d))) if s.size else 0.0


@dataclass(frozen=True)
class DeltaAccount:
    per_round: np.ndarray
    cumulative: np.ndarray  # running sum; the last entry is the budget spent
    round_violations: list[int]  # rounds with delta_t >= 1
    budget_exceeded: bool

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0

    @property
    def valid(self) -> bool:
        return not self.round_violations and not self.budget_exceeded


def accumulate_delta(sensitivity, d) -> DeltaAccount:
    sensitivity = np.asarray(sensitivity, dtype=float)
    d = np.asarray(d, dtype=float)
    if sensitivity.shape != d.shape:
        raise ValueError("sensitivity and stepsize series must be aligned")
    per_round = sensitivity / d
    cumulative = np.cumsum(per_round)
    violations = np.flatnonzero(per_round >= 1.0).tolist()
    total = float(cumulative[-1]) if cumulative.size else 0.0
    return DeltaAccount(per_round, cumulative, violations, total > 1.0)


class TwinShadow(engine.Shadow):
    """Replays one agent on an adjacent dataset against the primary run's message stream."""

    def __init__(self, pert: AdjacentPerturbation, capacity: int):
        self.pert = pert
        self.ledger = PrivacyLedger(agent=pert.agent, perturbation_round=pert.round)
        self.theta = None
        self.psi = None
        self._capacity = capacity
        self.dataset = None

    def advance(self, sim: engine.Simulation, msgs: engine.RoundMessages) -> None:
        i, t = self.pert.agent, msgs.t
        if t == 0:
            self.theta = sim.theta[i].copy()
            self.psi = sim.psi[i].copy()
            self.dataset = sim.problem.new_dataset(self._capacity)
        self.ledger.delta_theta.append(float(np.abs(sim.theta[i] - self.theta).sum()))
        self.ledger.delta_psi.append(float(np.abs(sim.psi[i] - self.psi).sum()))
        self.ledger.d.append(float(msgs.d_t[i]))

        batch = sim.datasets[i].batch_at(t)
        if t == self.pert.round:
            if self.pert.original is not None and not (
                np.array_equal(self.pert.original.a, batch.a) and np.array_equal(self.pert.original.b, batch.b)
            ):
                raise ValueError(f"perturbation original does not match agent {i}'s data at round {t}")
            batch = self.pert.replacement
        self.dataset.append(batch)
        grad = self.dataset.online_gradient(self.theta, t)
        self.theta, self.psi = sim.agent_update(i, self.theta, self.psi, grad, msgs)

    def cumulative_delta(self) -> float:
        return self.ledger.cumulative


def default_perturbations(config: engine.RunConfig, round_: int | None = None, seed: int | None = None,
                          problem=None) -> list[AdjacentPerturbation]:
    """One replaced data point per agent, the replacement drawn from the same source."""
    problem = problem or build_problem(config.problem, config.m, config.seed)
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 0xAD7])
    perts = []
    for i in range(config.m):
        k = int(rng.integers(0, max(config.T, 1))) if round_ is None else round_
        original = problem.draw(k, i)
        fresh = problem.replacement(k, i, rng)
        s = int(rng.integers(0, len(original)))
        a = original.a.copy()
        b = original.b.copy()
        a[s] = fresh.a[s]
        b[s] = fresh.b[s]
        perts.append(AdjacentPerturbation(agent=i, round=k, replacement=Batch(a=a, b=b), original=original))
    return perts


def twin_run(config: engine.RunConfig, perts: Sequence[AdjacentPerturbation], **run_kwargs):
    """Run the primary trajectory with one twin per perturbation; returns ``(ledgers, result)``."""
    seen = set()
    for p in perts:
        if not 0 <= p.agent < config.m:
            raise ValueError(f"perturbation agent {p.agent} out of range")
        if not 0 <= p.round < config.T:
            raise ValueError(f"perturbation round {p.round} outside 0..{config.T - 1}")
        if p.agent in seen:
            raise ValueError(f"agent {p.agent} perturbed twice; adjacent datasets differ in exactly one round")
        seen.add(p.agent)
    shadows = [TwinShadow(p, max(config.T, 1)) for p in perts]
    result = engine.run(config, shadows, **run_kwargs)
    return [s.ledger for s in shadows], result


@dataclass(frozen=True)
class BoundParams:
    lambda0: float
    nu: float
    d_l: float
    C_ii: float
    R_ii: float
    u_i: float
    C_z: float
    P_z: float
    varsigma: float = 0.6

    def __post_init__(self):
        for name in ("C_ii", "R_ii"):
            a = abs(getattr(self, name))
            if not 0.0 < a < 1.0:
                raise ValueError(f"|{name}| must lie in (0, 1), got {a}")
        if not self.d_l >= 0:
            raise ValueError("d_l must be nonnegative")

    def lam(self, t):
        return self.lambda0 / (np.asarray(t, dtype=float) + 1.0) ** self.nu


@dataclass(frozen=True)
class AnalyticBound:
    rho_psi: np.ndarray  # t = 0..T
    rho_theta: np.ndarray
    required_d0: float
    params: BoundParams
    constants_label: str = "empirical-constant"

    @property
    def total(self) -> np.ndarray:
        return self.rho_psi + self.rho_theta


def analytic_rho(params: BoundParams, T: int, constants_label: str = "empirical-constant") -> AnalyticBound:
    """Sensitivity envelopes for ``t = 0..T`` by direct summation."""
    a_C = 1.0 - abs(params.C_ii)
    a_R = 1.0 - abs(params.R_ii)
    lam = params.lam(np.arange(T + 1))
    rho_psi = np.zeros(T + 1)
    for t in range(1, T + 1):
        p = np.arange(t)
        rho_psi[t] = 2.0 * params.d_l * np.sum(a_C ** p * lam[t - 1 - p])
    gain = params.C_z * params.P_z ** np.arange(T + 1, dtype=float) + 1.0 / abs(params.u_i)
    pair = np.zeros(T + 1)
    pair[:T] = rho_psi[1:] + rho_psi[:T]
    rho_theta = np.zeros(T + 1)
    for t in range(1, T + 1):
        p = np.arange(t)
        rho_theta[t] = np.sum(a_R ** (t - p - 1) * gain[p] * pair[p])
    t = np.arange(T)
    required = float(np.sum((rho_psi[:T] + rho_theta[:T]) * (t + 1.0) ** params.varsigma))
    return AnalyticBound(rho_psi, rho_theta, required, params, constants_label)


@dataclass(frozen=True)
class BudgetCheck:
    satisfied: bool
    delta_bound: float
    required_d0: float
    d0: float


def budget_check(d0: float, bound: AnalyticBound) -> BudgetCheck:
    req = bound.required_d0
    return BudgetCheck(satisfied=d0 >= req, delta_bound=req / d0, required_d0=req, d0=d0)


@dataclass(frozen=True)
class Certificate:
    available: bool
    reason: str
    C0: float = math.nan
    C1: float = math.nan
    C2: float = math.nan
    C3: float = math.nan
    T0: int = -1
    required_d0: float = math.nan
    exponent: float = math.nan  # 1 + nu - varsigma

    def bound(self, t, C_z: float, nu: float):
        return self.C3 * (C_z + self.C0) / (np.asarray(t, dtype=float) + 1.0) ** (1.0 + nu)


def _rho_by_recursion(params: BoundParams, T: int):
    a_C = 1.0 - abs(params.C_ii)
    a_R = 1.0 - abs(params.R_ii)
    rp = np.zeros(T + 1)
    rt = np.zeros(T + 1)
    for t in range(T):
        rp[t + 1] = a_C * rp[t] + 2.0 * params.d_l * params.lambda0 / (t + 1.0) ** params.nu
        rt[t + 1] = a_R * rt[t] + (params.C_z * params.P_z ** t + 1.0 / abs(params.u_i)) * (rp[t + 1] + rp[t])
    return rp, rt


def asymptotic_certificate(params: BoundParams, L: float, dim: int, scan_cap: int = 1_000_000) -> Certificate:
    """Infinite-horizon constants; the dimension plays the role of ``n`` in ``sqrt(n) L``."""
    absR, absC, u = abs(params.R_ii), abs(params.C_ii), abs(params.u_i)
    nu = params.nu
    C1 = 0.5 * min(absR / 2.0, absC / 2.0)
    C0 = (4.0 - 2.0 * C1) / (u * (absC - 2.0 * C1))
    if C0 * u <= 1.0:
        return Certificate(False, "C0 * u_i <= 1; C3 undefined", C0=C0, C1=C1)

    t = np.arange(scan_cap + 1, dtype=float)
    lam = params.lam(t)
    geo = params.P_z ** t
    cond_R = absR / 2.0 >= math.sqrt(dim) * L * (params.C_z * t * geo + C0 * t) * lam / (t + 1.0)
    cond_C = C0 * absC / 2.0 >= (2.0 - absC) * params.C_z * geo
    bad = np.flatnonzero(~(cond_R & cond_C))
    T0 = int(bad[-1]) + 1 if bad.size else 0
    if T0 > scan_cap:
        return Certificate(False, f"no T0 found within scan cap {scan_cap}", C0=C0, C1=C1)

    rp, rt = _rho_by_recursion(params, T0)
    rho_T0 = rt[T0] + (C0 - 1.0 / u) * rp[T0]
    K = 2.0 * params.d_l * params.lambda0 * (params.C_z + C0)
    with np.errstate(over="ignore"):
        log_growth = (1.0 - T0) * math.log1p(-C1)
        growth = math.exp(log_growth) if log_growth < 700 else math.inf
        lemma = (4.0 * (1.0 + nu) / (math.e * math.log(2.0 / (2.0 - C1)))) ** (1.0 + nu)
        term1 = (2.0 / C1 + rho_T0 * growth / K) * lemma
        term2 = rho_T0 * (T0 + 1.0) ** (1.0 + nu) / K
    C2 = max(term1, term2)
    C3 = 2.0 * C2 * params.d_l * params.lambda0 * ((C0 + 1.0) * u - 1.0) / (C0 * u - 1.0)
    exponent = 1.0 + nu - params.varsigma
    required = C3 * (params.C_z + C0) * float(zeta(exponent, 1.0)) if math.isfinite(C3) else math.inf
    reason = "ok" if math.isfinite(required) else "constants overflow double precision"
    return Certificate(math.isfinite(required), reason, C0=C0, C1=C1, C2=C2, C3=C3, T0=T0,
                       required_d0=required, exponent=exponent)

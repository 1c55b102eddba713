"""Round-synchronous simulator for quantized push-pull gradient tracking.

Every round each agent (a) acquires a batch and evaluates its online gradient,
(b) publishes quantized copies of its decision and tracking variables, and
(c) updates from the round-``t`` snapshot of everything its neighbours published.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics, topology
from .problems import ConfigurationError, Problem, ProblemSpec, build_problem
from .quantizer import QuantSchedule, quantize_vector, stepsize

_INIT_TAG = 0x1417
_QUANT_TAG = 0x0A7


class StructuralError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    W: topology.WeightMatrices
    lambda0: float
    nu: float
    d0: Sequence[float]
    varsigma: Sequence[float]
    T: int
    seed: int
    problem: ProblemSpec
    quantization: bool = True
    psi0: str = "normal"  # "normal" | "zero"
    init_scale: float = 1.0
    trace_interval: int = 1

    @property
    def m(self) -> int:
        return self.W.m

    def schedules(self) -> list[QuantSchedule]:
        return [QuantSchedule(float(a), float(s)) for a, s in zip(self.d0, self.varsigma)]

    def lam(self, t: int) -> float:
        return self.lambda0 / (t + 1) ** self.nu


def schedule_violations(cfg: RunConfig) -> list[str]:
    out = []
    if not 0.5 < cfg.nu < 1.0:
        out.append(f"nu outside (1/2,1): nu={cfg.nu}")
    if not cfg.lambda0 > 0:
        out.append(f"lambda0 must be positive: lambda0={cfg.lambda0}")
    if len(cfg.d0) != cfg.m or len(cfg.varsigma) != cfg.m:
        out.append(f"need one d0 and one varsigma per agent (m={cfg.m})")
        return out
    for i, (d0, vs) in enumerate(zip(cfg.d0, cfg.varsigma)):
        if not d0 > 0:
            out.append(f"d0[{i}] must be positive: {d0}")
        if not 0.5 < vs < 1.0:
            out.append(f"varsigma[{i}] outside (1/2,1): {vs}")
    if max(cfg.varsigma) >= cfg.nu:
        out.append(f"max varsigma < nu violated: max varsigma={max(cfg.varsigma)}, nu={cfg.nu}")
    if cfg.T < 0:
        out.append("T must be nonnegative")
    if cfg.trace_interval < 1:
        out.append("trace_interval must be >= 1")
    if cfg.psi0 not in ("normal", "zero"):
        out.append(f"psi0 must be 'normal' or 'zero', got {cfg.psi0!r}")
    return out


def config_violations(cfg: RunConfig) -> list[str]:
    report = topology.validate(cfg.W)
    return [f"topology {d}" for d in report.details] + schedule_violations(cfg)


@dataclass
class RoundMessages:
    """What round ``t`` put on the wire, plus the private quantities tests inspect."""

    t: int
    q_theta: np.ndarray  # (m, d)
    q_psi: np.ndarray  # (m, d)
    z_broadcast: np.ndarray  # (m, m), row i is agent i's z
    d_t: np.ndarray  # (m,)
    lam: float
    grads: np.ndarray = field(repr=False)  # (m, d), never transmitted


class Simulation:
    """Mutable state of one run; ``step`` advances one round."""

    def __init__(self, config: RunConfig, problem: Problem | None = None):
        bad = config_violations(config)
        if bad:
            raise ConfigurationError("invalid run configuration:\n  " + "\n  ".join(bad))
        self.config = config
        m, dim = config.m, config.problem.dim
        self.problem = problem or build_problem(config.problem, m, config.seed)
        self.schedules = config.schedules()
        self.u = topology.left_eigenvector(config.W.R)
        self.v = topology.right_eigenvector(config.W.C)

        R, C = config.W.R, config.W.C
        self.IR = np.eye(m) + R
        self.R_diag = np.diag(R).copy()
        self.C_diag = np.diag(C).copy()
        self.R_off = R - np.diag(self.R_diag)
        self.C_off = C - np.diag(self.C_diag)

        self.theta = np.empty((m, dim))
        self.psi = np.empty((m, dim))
        for i in range(m):
            rng = np.random.default_rng([config.seed, _INIT_TAG, i])
            self.theta[i] = config.init_scale * rng.standard_normal(dim)
            psi = config.init_scale * rng.standard_normal(dim)
            self.psi[i] = psi if config.psi0 == "normal" else 0.0
        self.z = np.eye(m)
        self.qstreams = [np.random.default_rng([config.seed, _QUANT_TAG, i]) for i in range(m)]
        self.datasets = [self.problem.new_dataset(max(config.T, 1)) for _ in range(m)]
        self.t = 0

    @property
    def m(self) -> int:
        return self.config.m

    def publish(self, order: Sequence[int] | None = None) -> RoundMessages:
        """Steps (a) and (b): acquire data, evaluate gradients, quantize."""
        t, m = self.t, self.m
        order = range(m) if order is None else order
        grads = np.empty_like(self.theta)
        q_theta = np.empty_like(self.theta)
        q_psi = np.empty_like(self.psi)
        d_t = np.array([stepsize(t, s) for s in self.schedules])
        for i in order:
            self.datasets[i].append(self.problem.draw(t, i))
            grads[i] = self.datasets[i].online_gradient(self.theta[i], t)
            if self.config.quantization:
                q_theta[i] = quantize_vector(self.theta[i], d_t[i], self.qstreams[i])
                q_psi[i] = quantize_vector(self.psi[i], d_t[i], self.qstreams[i])
            else:
                q_theta[i] = self.theta[i]
                q_psi[i] = self.psi[i]
        return RoundMessages(t=t, q_theta=q_theta, q_psi=q_psi, z_broadcast=self.z.copy(),
                             d_t=d_t, lam=self.config.lam(t), grads=grads)

    def agent_update(self, i: int, theta_i, psi_i, grad_i, msgs: RoundMessages):
        """Step (c) for one agent given its own pre-round state; neighbours' values come from ``msgs``."""
        zii = msgs.z_broadcast[i, i]
        if not zii > 0:
            raise StructuralError(f"agent {i}: [z_t^i]_i = {zii} at t={msgs.t}")
        psi_new = (1.0 + self.C_diag[i]) * psi_i + self.C_off[i] @ msgs.q_psi + msgs.lam * grad_i
        theta_new = ((1.0 + self.R_diag[i]) * theta_i + self.R_off[i] @ msgs.q_theta
                     - (psi_new - psi_i) / (self.m * zii))
        return theta_new, psi_new

    def apply(self, msgs: RoundMessages, order: Sequence[int] | None = None) -> None:
        order = range(self.m) if order is None else order
        theta_new = np.empty_like(self.theta)
        psi_new = np.empty_like(self.psi)
        for i in order:
            theta_new[i], psi_new[i] = self.agent_update(i, self.theta[i], self.psi[i], msgs.grads[i], msgs)
        self.theta, self.psi = theta_new, psi_new
        self.z = topology.z_step(self.IR, msgs.z_broadcast)
        self.t += 1

    def step(self, order: Sequence[int] | None = None) -> RoundMessages:
        msgs = self.publish(order)
        self.apply(msgs, order)
        return msgs


class Shadow:
    """Hook interface for processes that ride along a run (e.g. privacy twins)."""

    def advance(self, sim: Simulation, msgs: RoundMessages) -> None:
        """Called after ``publish`` and before ``apply`` of round ``msgs.t``."""

    def settle(self, sim: Simulation) -> None:
        """Called after ``apply``; ``sim`` now holds round ``t+1`` states."""

    def cumulative_delta(self) -> float:
        return 0.0


@dataclass
class RunResult:
    trace: metrics.MetricsTrace
    simulation: Simulation
    messages: list[RoundMessages] | None


def run(config: RunConfig, shadows: Sequence[Shadow] = (), *, problem: Problem | None = None,
        on_row: Callable[[dict], None] | None = None,
        on_messages: Callable[[RoundMessages], None] | None = None,
        keep_messages: bool = False) -> RunResult:
    sim = Simulation(config, problem)
    trace = metrics.MetricsTrace()
    log: list[RoundMessages] | None = [] if keep_messages else None

    def emit():
        max_delta = max((s.cumulative_delta() for s in shadows), default=0.0)
        row = metrics.trace_row(sim.t, sim.theta, sim.psi, sim.u, sim.v, sim.problem, max_delta)
        trace.append(row)
        if on_row is not None:
            on_row(row)

    emit()
    for t in range(config.T):
        msgs = sim.publish()
        for s in shadows:
            s.advance(sim, msgs)
        sim.apply(msgs)
        for s in shadows:
            s.settle(sim)
        if on_messages is not None:
            on_messages(msgs)
        if log is not None:
            log.append(msgs)
        if sim.t % config.trace_interval == 0 or sim.t == config.T:
            emit()
    return RunResult(trace=trace, simulation=sim, messages=log)

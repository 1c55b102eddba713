"""Command-line entry point: ``quantldp {validate,run,compare,audit} CONFIG``.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback
from contextlib import ExitStack
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, engine, metrics, privacy, topology
from .problems import ConfigurationError, build_problem

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

AUDIT_COLUMNS = ("agent", "t", "delta_theta", "delta_psi", "delta", "d_t", "delta_t", "cumulative_delta",
                 "rho_psi", "rho_theta", "bound_ok")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serializable: {type(x)}")


# --- message log and final states ---------------------------------------------------


class MessageLog:
    """One row per (round, agent) with exactly the values that went on the wire."""

    def __init__(self, path, dim: int, flush_interval: int = 10):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(["t", "agent", "d_t"] + [f"q_theta_{k}" for k in range(dim)]
                         + [f"q_psi_{k}" for k in range(dim)])
        self.flush_interval = flush_interval
        self._rounds = 0

    def __call__(self, msgs: engine.RoundMessages) -> None:
        for i in range(msgs.q_theta.shape[0]):
            self._w.writerow([msgs.t, i, _fmt(msgs.d_t[i])] + [_fmt(x) for x in msgs.q_theta[i]]
                             + [_fmt(x) for x in msgs.q_psi[i]])
        self._rounds += 1
        if self._rounds % self.flush_interval == 0:
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def write_final_states(path, sim: engine.Simulation) -> None:
    m, dim = sim.theta.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent"] + [f"theta_{k}" for k in range(dim)] + [f"psi_{k}" for k in range(dim)]
                   + [f"z_{j}" for j in range(m)])
        for i in range(m):
            w.writerow([i] + [_fmt(x) for x in sim.theta[i]] + [_fmt(x) for x in sim.psi[i]]
                       + [_fmt(x) for x in sim.z[i]])


# --- privacy audit --------------------------------------------------------------------


@dataclass
class AgentAudit:
    agent: int
    perturbation_round: int
    account: privacy.DeltaAccount
    ledger: privacy.PrivacyLedger
    bound: privacy.AnalyticBound | None
    budget: privacy.BudgetCheck | None
    certificate: privacy.Certificate | None

    @property
    def bound_ok(self) -> np.ndarray | None:
        if self.bound is None:
            return None
        T = len(self.ledger.d)
        return self.ledger.sensitivity <= self.bound.total[:T]


@dataclass
class AuditOutcome:
    agents: list[AgentAudit]
    result: engine.RunResult
    fit: topology.GeometricFit | None
    constants_label: str
    d_l: float | None
    L: float | None

    def max_delta_series(self) -> np.ndarray:
        if not self.agents:
            return np.zeros(self.result.simulation.config.T)
        return np.max([a.account.cumulative for a in self.agents], axis=0)

    @property
    def max_delta(self) -> float:
        s = self.max_delta_series()
        return float(s[-1]) if s.size else 0.0


def perturbations_for(cfg: cfgmod.ExperimentConfig, problem) -> list[privacy.AdjacentPerturbation]:
    p = cfg.privacy
    if p.perturb == "none" or cfg.run.T == 0:
        return []
    perts = privacy.default_perturbations(cfg.run, round_=p.round, seed=p.seed, problem=problem)
    if p.agents is not None:
        keep = set(p.agents)
        perts = [q for q in perts if q.agent in keep]
    return perts


def _lipschitz(problem) -> float:
    if problem.kind == "logistic":
        return float(np.max(np.sum(problem.A ** 2, axis=1))) / 4.0
    return 1.0


def _d_l(problem) -> float | None:
    if problem.kind == "logistic":
        return problem.grad_l1_bound()
    if problem.spec.grad_bound is None:
        return None
    return problem.grad_l1_bound()


def perform_audit(cfg: cfgmod.ExperimentConfig, *, on_row=None, on_messages=None) -> AuditOutcome:
    run_cfg = cfg.run
    problem = build_problem(run_cfg.problem, run_cfg.m, run_cfg.seed)
    perts = perturbations_for(cfg, problem)
    ledgers, result = privacy.twin_run(run_cfg, perts, problem=problem, on_row=on_row, on_messages=on_messages)

    sim = result.simulation
    p = cfg.privacy
    fit = None
    if p.C_z is not None:
        C_z, P_z = p.C_z, p.P_z
    else:
        fit = topology.estimate_geometric_constants(run_cfg.W, p.fit_horizon)
        C_z, P_z = fit.C_z, fit.P_z
    d_l = _d_l(problem)
    L = p.L if p.L is not None else _lipschitz(problem)

    agents = []
    for led in ledgers:
        i = led.agent
        bound = budget = cert = None
        if d_l is not None:
            params = privacy.BoundParams(lambda0=run_cfg.lambda0, nu=run_cfg.nu, d_l=d_l,
                                         C_ii=run_cfg.W.C[i, i], R_ii=run_cfg.W.R[i, i], u_i=sim.u[i],
                                         C_z=C_z, P_z=P_z, varsigma=run_cfg.varsigma[i])
            bound = privacy.analytic_rho(params, run_cfg.T, p.constants_label)
            budget = privacy.budget_check(run_cfg.d0[i], bound)
            cert = privacy.asymptotic_certificate(params, L, run_cfg.problem.dim)
        agents.append(AgentAudit(i, led.perturbation_round, led.accumulate(), led, bound, budget, cert))
    return AuditOutcome(agents, result, fit, p.constants_label, d_l, L)


def write_audit(outcome: AuditOutcome, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# twin reading: {privacy.TWIN_READING}\n")
        w = csv.writer(fh)
        w.writerow(AUDIT_COLUMNS)
        for a in outcome.agents:
            led, acc = a.ledger, a.account
            ok = a.bound_ok
            for t in range(len(led.d)):
                rp = a.bound.rho_psi[t] if a.bound is not None else math.nan
                rt = a.bound.rho_theta[t] if a.bound is not None else math.nan
                w.writerow([a.agent, t, _fmt(led.delta_theta[t]), _fmt(led.delta_psi[t]),
                            _fmt(led.delta_theta[t] + led.delta_psi[t]), _fmt(led.d[t]),
                            _fmt(acc.per_round[t]), _fmt(acc.cumulative[t]), _fmt(rp), _fmt(rt),
                            "na" if ok is None else _fmt(ok[t])])


def audit_summary(outcome: AuditOutcome) -> dict:
    series = outcome.max_delta_series()
    T = series.size
    per_agent = {}
    for a in outcome.agents:
        entry = {
            "perturbation_round": a.perturbation_round,
            "ldp_pair": [0, a.account.total],
            "delta": a.account.total,
            "round_violations": a.account.round_violations,
            "budget_exceeded": a.account.budget_exceeded,
            "valid": a.account.valid,
        }
        if a.bound is not None:
            ok = a.bound_ok
            entry["dominance_holds"] = bool(np.all(ok))
            entry["dominance_holds_t_le_500"] = bool(np.all(ok[:501]))
            entry["budget_check"] = asdict(a.budget)
        if a.certificate is not None:
            entry["certificate"] = asdict(a.certificate)
        per_agent[str(a.agent)] = entry
    late = 0.0
    if T > 1 and series[-1] > 0:
        late = float((series[-1] - series[(T - 1) // 2]) / series[-1])
    return {
        "twin_reading": privacy.TWIN_READING,
        "constants_label": outcome.constants_label,
        "C_z": outcome.fit.C_z if outcome.fit else None,
        "P_z": outcome.fit.P_z if outcome.fit else None,
        "d_l": outcome.d_l,
        "L": outcome.L,
        "sqrt_n_read_as_sqrt_dim": True,
        "max_delta": outcome.max_delta,
        "max_delta_late_half_increase": late,
        "max_delta_checkpoints": {str(t): float(series[t - 1]) for t in _checkpoints(T)},
        "agents": per_agent,
    }


def _checkpoints(T: int) -> list[int]:
    return sorted({max(1, (T * k) // 4) for k in range(1, 5)}) if T > 0 else []


# --- comparison -----------------------------------------------------------------------


@dataclass
class CompareOutcome:
    quantized: engine.RunResult
    baseline: engine.RunResult

    def summary(self) -> dict:
        q, b = self.quantized, self.baseline
        out = {
            "final_gap_quantized": q.trace.last["gap"],
            "final_gap_baseline": b.trace.last["gap"],
            "gap_difference": abs(q.trace.last["gap"] - b.trace.last["gap"]),
        }
        prob = q.simulation.problem
        if prob.kind == "logistic":
            acc_q = prob.accuracy(metrics.average_theta(q.simulation.theta, q.simulation.u))
            acc_b = b.simulation.problem.accuracy(metrics.average_theta(b.simulation.theta, b.simulation.u))
            out.update(accuracy_quantized=acc_q, accuracy_baseline=acc_b,
                       accuracy_difference_pp=100.0 * abs(acc_q - acc_b))
        return out


def perform_compare(cfg: cfgmod.ExperimentConfig) -> CompareOutcome:
    run_cfg = cfg.run
    problem = build_problem(run_cfg.problem, run_cfg.m, run_cfg.seed)
    q = engine.run(replace(run_cfg, quantization=True), problem=problem)
    b = engine.run(replace(run_cfg, quantization=False), problem=problem)
    return CompareOutcome(q, b)


def write_compare(outcome: CompareOutcome, path: Path) -> None:
    cols = metrics.COLUMNS[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"{c}_quantized" for c in cols] + [f"{c}_baseline" for c in cols])
        for rq, rb in zip(outcome.quantized.trace.rows, outcome.baseline.trace.rows):
            w.writerow([rq["t"]] + [_fmt(rq[c]) for c in cols] + [_fmt(rb[c]) for c in cols])


# --- commands -------------------------------------------------------------------------


def _load(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config)
    return cfg.with_overrides(seed=args.seed, horizon=args.horizon, out_dir=args.out_dir)


def _report_issues(cfg, out=None) -> bool:
    out = out or sys.stdout
    report, issues = cfgmod.check(cfg)
    print(report.format(), file=out)
    if issues:
        print("schedule/run constraints: FAIL", file=out)
        for msg in issues:
            print(f"  {msg}", file=out)
    else:
        print("schedule/run constraints: ok", file=out)
    return report.passed and not issues


def cmd_validate(cfg) -> int:
    return EXIT_OK if _report_issues(cfg) else EXIT_INVALID


def _record_error(cfg, command: str, exc: BaseException) -> None:
    record = {"command": command, "error": type(exc).__name__, "message": str(exc),
              "traceback": traceback.format_exception_only(type(exc), exc)}
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        _dump_json(cfg.output_path("error"), record)
    except OSError:
        pass
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def cmd_run(cfg) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with ExitStack() as stack:
        trace = stack.enter_context(metrics.TraceWriter(cfg.output_path("trace"), cfg.flush_interval))
        log = MessageLog(cfg.output_path("messages"), cfg.run.problem.dim, cfg.flush_interval)
        stack.callback(log.close)
        if cfg.privacy.perturb == "none":
            result = engine.run(cfg.run, on_row=trace, on_messages=log)
            max_delta = 0.0
        else:
            outcome = perform_audit(cfg, on_row=trace, on_messages=log)
            result, max_delta = outcome.result, outcome.max_delta
    write_final_states(cfg.output_path("final_states"), result.simulation)
    last = result.trace.last
    print(f"T={cfg.run.T} seed={cfg.run.seed} backend={_backend()} gap={last['gap']:.6g} "
          f"cons_theta={last['cons_theta']:.6g} max_delta={max_delta:.6g}")
    print(f"wrote {cfg.output_path('trace')}, {cfg.output_path('messages')}, {cfg.output_path('final_states')}")
    return EXIT_OK


def cmd_compare(cfg) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    outcome = perform_compare(cfg)
    write_compare(outcome, cfg.output_path("compare"))
    summary = outcome.summary()
    _dump_json(cfg.output_path("compare_summary"), summary)
    for k in sorted(summary):
        print(f"{k}: {summary[k]:.6g}")
    return EXIT_OK


def cmd_audit(cfg) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    outcome = perform_audit(cfg)
    write_audit(outcome, cfg.output_path("audit"))
    summary = audit_summary(outcome)
    _dump_json(cfg.output_path("audit_summary"), summary)
    print(f"twin reading: {privacy.TWIN_READING}")
    for t, v in summary["max_delta_checkpoints"].items():
        print(f"  t={t:>6}  max_i delta^i = {v:.6g}")
    print(f"max_i delta^i = {summary['max_delta']:.6g} "
          f"(increase over the second half: {100 * summary['max_delta_late_half_increase']:.2f}%)")
    for i, a in summary["agents"].items():
        line = f"  agent {i}: (0, {a['delta']:.6g})-LDP, perturbed at round {a['perturbation_round']}"
        if "budget_check" in a:
            bc = a["budget_check"]
            line += (f"; budget_check d0={bc['d0']:.4g} required={bc['required_d0']:.4g} "
                     f"{'satisfied' if bc['satisfied'] else 'NOT satisfied'}")
        print(line)
    print(f"wrote {cfg.output_path('audit')}, {cfg.output_path('audit_summary')}")
    return EXIT_OK


def _backend() -> str:
    from ._backend import BACKEND
    return BACKEND


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "compare": cmd_compare, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="TOML experiment file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None, help="override [run] T")
        p.add_argument("--out-dir", default=None, help="override [output] dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command != "validate":
        report, issues = cfgmod.check(cfg)
        if not report.passed or issues:
            _report_issues(cfg, out=sys.stderr)
            return EXIT_INVALID
    try:
        return COMMANDS[args.command](cfg)
    except (OSError, ArithmeticError, RuntimeError, ValueError) as exc:
        _record_error(cfg, args.command, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

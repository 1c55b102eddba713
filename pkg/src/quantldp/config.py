"""Experiment configuration files (TOML).

One file drives every CLI command. Sections::

    [graph]      template = "ring" | "three_node" (+ m, weight) or explicit R, C matrices
    [schedules]  lambda0, nu, per-agent d0 and varsigma lists
    [problem]    kind, dim, batch, corpus | synthetic, noise, center_scale, grad_bound
    [run]        T, seed, quantization, trace_interval, flush_interval, psi0, init_scale
    [privacy]    perturb ("default" | "none"), round, agents, C_z / P_z overrides, L
    [output]     dir plus file names for every artifact

Syntax errors carry the decoder's line and column; semantic errors name the offending
key and the line it appears on. Corpus paths resolve against the config file's folder,
output paths against the working directory.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import engine, topology
from .problems import DATA_DIR, ConfigurationError, ProblemSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SECTIONS = ("graph", "schedules", "problem", "run", "privacy", "output")

_OUTPUT_DEFAULTS = {
    "dir": "out",
    "trace": "trace.csv",
    "messages": "messages.csv",
    "final_states": "final_states.csv",
    "audit": "audit.csv",
    "audit_summary": "audit_summary.json",
    "compare": "compare.csv",
    "compare_summary": "compare_summary.json",
    "error": "error.json",
}


class ConfigError(ConfigurationError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        where += f"{line}: " if line else (" " if path else "")
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class PrivacySettings:
    perturb: str = "default"  # "default" | "none"
    round: int | None = 5  # None draws one round per agent at random
    agents: tuple[int, ...] | None = None
    seed: int | None = None
    C_z: float | None = None
    P_z: float | None = None
    L: float | None = None  # gradient Lipschitz constant; derived from the problem when unset
    fit_horizon: int = 200

    @property
    def constants_label(self) -> str:
        return "user-constant" if self.C_z is not None else "empirical-constant"


@dataclass(frozen=True)
class ExperimentConfig:
    run: engine.RunConfig
    privacy: PrivacySettings = field(default_factory=PrivacySettings)
    outputs: dict = field(default_factory=lambda: dict(_OUTPUT_DEFAULTS))
    flush_interval: int = 10
    source: Path | None = None

    @property
    def out_dir(self) -> Path:
        return Path(self.outputs["dir"])

    def output_path(self, key: str) -> Path:
        return self.out_dir / self.outputs[key]

    def with_overrides(self, seed=None, horizon=None, out_dir=None) -> "ExperimentConfig":
        run, outputs = self.run, dict(self.outputs)
        if seed is not None:
            run = replace(run, seed=int(seed))
        if horizon is not None:
            run = replace(run, T=int(horizon))
        if out_dir is not None:
            outputs["dir"] = str(out_dir)
        return replace(self, run=run, outputs=outputs)


class _Locator:
    """Maps (section, key) to the source line for diagnostics."""

    def __init__(self, text: str):
        self.lines: dict[tuple[str, str], int] = {}
        self.sections: dict[str, int] = {}
        section = ""
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            m = re.match(r"^\[([^\[\]]+)\]", line)
            if m:
                section = m.group(1).strip()
                self.sections.setdefault(section, n)
                continue
            m = re.match(r"^([A-Za-z0-9_\-\"]+)\s*=", line)
            if m:
                self.lines.setdefault((section, m.group(1).strip('"')), n)

    def __call__(self, section: str, key: str | None = None) -> int | None:
        if key is not None and (section, key) in self.lines:
            return self.lines[(section, key)]
        return self.sections.get(section)


def _get(tbl, section, key, kind, loc, path, default=...):
    if key not in tbl:
        if default is ...:
            raise ConfigError(f"[{section}] missing required key '{key}'", loc(section), path)
        return default
    value = tbl[key]
    ok = {
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "int": isinstance(value, int) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
        "list": isinstance(value, list),
        "table": isinstance(value, dict),
    }[kind]
    if not ok:
        raise ConfigError(f"[{section}] '{key}' must be of type {kind}, got {value!r}", loc(section, key), path)
    return float(value) if kind == "float" else value


def _matrix(tbl, key, loc, path):
    rows = _get(tbl, "graph", key, "list", loc, path)
    try:
        M = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"[graph] '{key}' must be a rectangular numeric matrix", loc("graph", key), path)
    if M.ndim != 2:
        raise ConfigError(f"[graph] '{key}' must be a list of rows", loc("graph", key), path)
    return M


def _graph(tbl, loc, path) -> topology.WeightMatrices:
    if "template" in tbl:
        name = _get(tbl, "graph", "template", "str", loc, path)
        if name == "ring":
            m = _get(tbl, "graph", "m", "int", loc, path, 5)
            w = _get(tbl, "graph", "weight", "float", loc, path, 0.3)
            return topology.ring(m, w)
        if name == "three_node":
            return topology.three_node()
        raise ConfigError(f"[graph] unknown template {name!r}; known: {sorted(topology.TEMPLATES)}",
                          loc("graph", "template"), path)
    R = _matrix(tbl, "R", loc, path)
    C = _matrix(tbl, "C", loc, path)
    return topology.WeightMatrices(R, C)


def _per_agent(tbl, key, m, loc, path):
    value = _get(tbl, "schedules", key, "list", loc, path)
    if len(value) != m or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise ConfigError(f"[schedules] '{key}' must list {m} numbers, one per agent", loc("schedules", key), path)
    return tuple(float(x) for x in value)


def _resolve(base: Path | None, name: str) -> str:
    if name == "shipped":
        return str(DATA_DIR / "separable_2000.csv")
    p = Path(name)
    if not p.is_absolute() and base is not None:
        p = base / p
    return str(p)


def _problem(tbl, loc, path, base) -> ProblemSpec:
    kind = _get(tbl, "problem", "kind", "str", loc, path)
    if kind not in ("logistic", "quadratic"):
        raise ConfigError(f"[problem] kind must be 'logistic' or 'quadratic', got {kind!r}", loc("problem", "kind"), path)
    kw = dict(kind=kind, dim=_get(tbl, "problem", "dim", "int", loc, path),
              batch=_get(tbl, "problem", "batch", "int", loc, path, 2))
    if "corpus" in tbl:
        kw["corpus"] = _resolve(base, _get(tbl, "problem", "corpus", "str", loc, path))
    if "synthetic" in tbl:
        kw["synthetic"] = dict(_get(tbl, "problem", "synthetic", "table", loc, path))
    for key in ("center_scale", "noise", "grad_bound"):
        if key in tbl:
            kw[key] = _get(tbl, "problem", key, "float", loc, path)
    if "test_points" in tbl:
        kw["test_points"] = _get(tbl, "problem", "test_points", "int", loc, path)
    try:
        return ProblemSpec(**kw)
    except ConfigurationError as exc:
        raise ConfigError(f"[problem] {exc}", loc("problem"), path) from None


def _privacy(tbl, loc, path) -> PrivacySettings:
    kw = {}
    if "perturb" in tbl:
        kw["perturb"] = _get(tbl, "privacy", "perturb", "str", loc, path)
        if kw["perturb"] not in ("default", "none"):
            raise ConfigError("[privacy] perturb must be 'default' or 'none'", loc("privacy", "perturb"), path)
    if "round" in tbl:
        r = tbl["round"]
        if r == "random":
            kw["round"] = None
        elif isinstance(r, int) and not isinstance(r, bool) and r >= 0:
            kw["round"] = r
        else:
            raise ConfigError("[privacy] round must be a nonnegative integer or \"random\"", loc("privacy", "round"), path)
    if "agents" in tbl:
        agents = _get(tbl, "privacy", "agents", "list", loc, path)
        kw["agents"] = tuple(int(a) for a in agents)
    if "seed" in tbl:
        kw["seed"] = _get(tbl, "privacy", "seed", "int", loc, path)
    for key in ("C_z", "P_z", "L"):
        if key in tbl:
            kw[key] = _get(tbl, "privacy", key, "float", loc, path)
    if "fit_horizon" in tbl:
        kw["fit_horizon"] = _get(tbl, "privacy", "fit_horizon", "int", loc, path)
    if ("C_z" in kw) != ("P_z" in kw):
        raise ConfigError("[privacy] C_z and P_z must be overridden together", loc("privacy"), path)
    return PrivacySettings(**kw)


def parse(text: str, path=None) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"syntax error: {exc}", line, path) from None
    loc = _Locator(text)
    base = Path(path).parent if path else None

    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}", loc(unknown[0]), path)
    for section in ("graph", "schedules", "problem", "run"):
        if section not in doc:
            raise ConfigError(f"missing section [{section}]", None, path)

    try:
        W = _graph(doc["graph"], loc, path)
        topology.validate(W)
    except topology.TopologyError as exc:
        raise ConfigError(f"[graph] {exc}", loc("graph"), path) from None
    sch = doc["schedules"]
    runs = doc["run"]
    problem = _problem(doc["problem"], loc, path, base)
    psi0 = _get(runs, "run", "psi0", "str", loc, path, "normal")
    run = engine.RunConfig(
        W=W,
        lambda0=_get(sch, "schedules", "lambda0", "float", loc, path),
        nu=_get(sch, "schedules", "nu", "float", loc, path),
        d0=_per_agent(sch, "d0", W.m, loc, path),
        varsigma=_per_agent(sch, "varsigma", W.m, loc, path),
        T=_get(runs, "run", "T", "int", loc, path),
        seed=_get(runs, "run", "seed", "int", loc, path, 0),
        problem=problem,
        quantization=_get(runs, "run", "quantization", "bool", loc, path, True),
        psi0=psi0,
        init_scale=_get(runs, "run", "init_scale", "float", loc, path, 1.0),
        trace_interval=_get(runs, "run", "trace_interval", "int", loc, path, 1),
    )
    flush = _get(runs, "run", "flush_interval", "int", loc, path, 10)
    if flush < 1:
        raise ConfigError("[run] flush_interval must be >= 1", loc("run", "flush_interval"), path)

    outputs = dict(_OUTPUT_DEFAULTS)
    for key, value in doc.get("output", {}).items():
        if key not in outputs:
            raise ConfigError(f"[output] unknown key '{key}'", loc("output", key), path)
        outputs[key] = _get(doc["output"], "output", key, "str", loc, path)

    return ExperimentConfig(run=run, privacy=_privacy(doc.get("privacy", {}), loc, path),
                            outputs=outputs, flush_interval=flush, source=Path(path) if path else None)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse(text, path)


def check(cfg: ExperimentConfig) -> tuple[topology.ValidationReport, list[str]]:
    """Topology report plus schedule/run violations; both empty means runnable."""
    report = topology.validate(cfg.run.W)
    issues = engine.schedule_violations(cfg.run)
    p = cfg.privacy
    if p.agents is not None and not all(0 <= a < cfg.run.m for a in p.agents):
        issues.append(f"privacy agents {list(p.agents)} outside 0..{cfg.run.m - 1}")
    if p.perturb == "default" and p.round is not None and cfg.run.T > 0 and p.round >= cfg.run.T:
        issues.append(f"privacy round {p.round} must be below T={cfg.run.T}")
    return report, issues

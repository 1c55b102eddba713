"""Online data streams and loss/gradient oracles.

Two problem families are supported. ``logistic`` is binary logistic regression on
a finite labelled corpus, sampled with replacement. ``quadratic`` is
``0.5 * ||theta - b||^2`` with per-agent noisy targets around fixed centers, so
the population optimum is known in closed form.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import kernels

DATA_DIR = Path(__file__).parent / "data"
SHIPPED_CORPUS = DATA_DIR / "separable_2000.csv"
SHIPPED_CORPUS_PARAMS = dict(n=2000, dim=4, margin=2.8, scale=0.45, seed=20240601)


class ConfigurationError(ValueError):
    pass


class DataStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class DataPoint:
    """Logistic: ``a`` features, ``b`` label in {-1, +1}. Quadratic: ``a`` unused, ``b`` target."""

    a: np.ndarray | None
    b: float | np.ndarray


@dataclass(frozen=True)
class Batch:
    a: np.ndarray  # (n, dim) features; empty (n, 0) for quadratic
    b: np.ndarray  # (n,) labels or (n, dim) targets

    def __len__(self):
        return self.b.shape[0]

    def points(self) -> list[DataPoint]:
        if self.b.ndim == 1:
            return [DataPoint(self.a[s], float(self.b[s])) for s in range(len(self))]
        return [DataPoint(None, self.b[s]) for s in range(len(self))]


@dataclass(frozen=True)
class ProblemSpec:
    kind: str  # "logistic" | "quadratic"
    dim: int
    batch: int = 2
    corpus: str | None = None  # logistic: path to a delimited file; None means the shipped corpus
    synthetic: dict | None = None  # logistic: generator params overriding the corpus
    test_points: int = 2000
    center_scale: float = 1.0  # quadratic
    noise: float = 1.0  # quadratic
    grad_bound: float | None = None  # quadratic: user-supplied d_l

    def __post_init__(self):
        if self.kind not in ("logistic", "quadratic"):
            raise ConfigurationError(f"unknown problem kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("dim must be >= 1")
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def loss(kind: str, theta, x: DataPoint) -> float:
    theta = np.asarray(theta, dtype=float)
    if kind == "logistic":
        _check_logistic(theta, x)
        return float(np.logaddexp(0.0, -x.b * (x.a @ theta)))
    if kind == "quadratic":
        _check_quadratic(theta, x)
        diff = theta - x.b
        return 0.5 * float(diff @ diff)
    raise ValueError(f"unknown problem kind {kind!r}")


def loss_gradient(kind: str, theta, x: DataPoint) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    if kind == "logistic":
        _check_logistic(theta, x)
        return -x.b * sigmoid(-x.b * (x.a @ theta)) * x.a
    if kind == "quadratic":
        _check_quadratic(theta, x)
        return theta - x.b
    raise ValueError(f"unknown problem kind {kind!r}")


def _check_logistic(theta, x):
    if x.a is None or np.ndim(x.b) != 0 or np.shape(x.a) != theta.shape:
        raise ValueError("logistic gradient needs a feature vector matching theta and a scalar label")


def _check_quadratic(theta, x):
    if np.shape(x.b) != theta.shape:
        raise ValueError("quadratic gradient needs a target vector matching theta")


class OnlineDataset:
    """Append-only per-agent store; slot ``k`` holds exactly the batch acquired at round ``k``."""

    def __init__(self, kind: str, dim: int, batch: int, capacity: int):
        self.kind = kind
        self.rounds = 0
        self.capacity = capacity
        if kind == "logistic":
            self._a = np.zeros((capacity, batch, dim))
            self._b = np.zeros((capacity, batch))
        else:
            self._a = None
            self._b = np.zeros((capacity, batch, dim))

    def append(self, batch: Batch) -> None:
        if self.rounds >= self.capacity:
            raise DataStateError(f"dataset capacity {self.capacity} exhausted")
        if self._a is not None:
            self._a[self.rounds] = batch.a
        self._b[self.rounds] = batch.b
        self.rounds += 1

    def batch_at(self, k: int) -> Batch:
        if not 0 <= k < self.rounds:
            raise DataStateError(f"no data stored for round {k}")
        a = self._a[k] if self._a is not None else np.zeros((self._b.shape[1], 0))
        return Batch(a=a.copy(), b=self._b[k].copy())

    def online_gradient(self, theta, t: int) -> np.ndarray:
        """``(1/(t+1)) * sum_{k<=t}`` of the batch-averaged gradient at ``theta``."""
        if t + 1 > self.rounds:
            raise DataStateError(f"rounds 0..{t} requested but only {self.rounds} stored")
        theta = np.ascontiguousarray(theta, dtype=float)
        if self.kind == "logistic":
            return kernels.logistic_online_grad(self._a, self._b, theta, t + 1)
        return kernels.quadratic_online_grad(self._b, theta, t + 1)


def generate_separable(n: int, dim: int, margin: float = 1.0, scale: float = 0.5, seed: int = 0):
    """Linearly separable points with ``b * (w^T a) >= margin`` for a planted ``w``.

    The separator passes through the origin, so the classes are balanced and no
    bias feature is needed. Returns ``(A, b, w)``. Candidates are
    drawn in fixed-size chunks, so the first ``k`` points do not depend on ``n``.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    w *= 4.0 / np.linalg.norm(w)
    A = np.empty((0, dim))
    while A.shape[0] < n:
        cand = scale * rng.standard_normal((4096, dim))
        keep = np.abs(cand @ w) >= margin
        A = np.vstack([A, cand[keep]])
    A = A[:n]
    b = np.sign(A @ w)
    return A, b, w


def write_corpus(path, A, b) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(b, A):
            writer.writerow([int(label)] + [repr(float(x)) for x in row])


def load_corpus(path) -> tuple[np.ndarray, np.ndarray]:
    """Header-less delimited file: label, then features. Labels are mapped to {-1, +1}."""
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError(f"{path}: empty corpus")
    delim = "," if "," in lines[0] else None
    rows = []
    width = None
    for lineno, ln in enumerate(lines, 1):
        fields = ln.split(delim) if delim else ln.split()
        if width is None:
            width = len(fields)
        if len(fields) != width:
            raise ConfigurationError(f"{path}:{lineno}: ragged row ({len(fields)} fields, expected {width})")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows)
    if data.shape[1] < 2:
        raise ConfigurationError(f"{path}: need a label column and at least one feature")
    labels = data[:, 0]
    values = np.unique(labels)
    if values.size > 2:
        raise ConfigurationError(f"{path}: expected binary labels, found {values.tolist()}")
    if values.size == 2:
        b = np.where(labels == values.max(), 1.0, -1.0)
    else:
        b = np.where(labels > 0, 1.0, -1.0)
    A = data[:, 1:]
    if not np.all(np.isfinite(A)):
        raise ConfigurationError(f"{path}: non-finite features")
    return np.ascontiguousarray(A), b


def grad_l1_bound(A: np.ndarray) -> float:
    """Per-sample l1 gradient bound for logistic loss: ``max ||a||_1``."""
    if A.shape[0] == 0:
        raise ConfigurationError("empty corpus")
    return float(np.max(np.abs(A).sum(axis=1)))


def corpus_hash(A, b) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(A).tobytes())
    h.update(np.ascontiguousarray(b).tobytes())
    return h.hexdigest()


def _is_separable(A, b) -> bool:
    from scipy.optimize import linprog

    # feasibility of b_p * a_p^T w >= 1
    res = linprog(np.zeros(A.shape[1]), A_ub=-(b[:, None] * A), b_ub=-np.ones(len(b)),
                  bounds=[(None, None)] * A.shape[1], method="highs")
    return res.status == 0


_FSTAR_CACHE: dict[str, float] = {}


def logistic_optimum(A, b, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Infimum of the mean logistic loss over the corpus, cached by corpus hash.

    Separable corpora have infimum 0 (not attained). Otherwise damped Newton
    iterations run until the full gradient norm is at most ``tol``.
    """
    key = corpus_hash(A, b)
    if key in _FSTAR_CACHE:
        return _FSTAR_CACHE[key]
    if _is_separable(A, b):
        value = 0.0
    else:
        n, dim = A.shape
        theta = np.zeros(dim)

        def f(th):
            return float(np.mean(np.logaddexp(0.0, -b * (A @ th))))

        for _ in range(max_iter):
            s = sigmoid(-b * (A @ theta))
            grad = -(A.T @ (b * s)) / n
            if np.linalg.norm(grad) <= tol:
                break
            H = (A.T * (s * (1 - s))) @ A / n + 1e-12 * np.eye(dim)
            step = np.linalg.solve(H, grad)
            fx, alpha = f(theta), 1.0
            while f(theta - alpha * step) > fx - 1e-4 * alpha * grad @ step and alpha > 1e-10:
                alpha *= 0.5
            theta = theta - alpha * step
        else:
            warnings.warn("logistic optimum did not reach the gradient tolerance", RuntimeWarning)
        value = f(theta)
    _FSTAR_CACHE[key] = value
    return value


def _point_rng(seed: int, tag: int, i: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, i, t])


_DATA_TAG = 0xDA7A


class Problem:
    kind: str
    dim: int
    batch: int

    def new_dataset(self, capacity: int) -> OnlineDataset:
        return OnlineDataset(self.kind, self.dim, self.batch, capacity)


class QuadraticProblem(Problem):
    """Agent ``i`` observes ``b = c_i + noise * N(0, I)``; optimum is the mean center."""

    kind = "quadratic"

    def __init__(self, spec: ProblemSpec, m: int, seed: int):
        self.spec = spec
        self.dim, self.batch, self.m, self.seed = spec.dim, spec.batch, m, seed
        self.centers = spec.center_scale * np.random.default_rng([seed, 0xC3]).standard_normal((m, spec.dim))
        self.theta_star = self.centers.mean(axis=0)
        self.noise = spec.noise

    def draw(self, t: int, i: int) -> Batch:
        rng = _point_rng(self.seed, _DATA_TAG, i, t)
        targets = self.centers[i] + self.noise * rng.standard_normal((self.batch, self.dim))
        return Batch(a=np.zeros((self.batch, 0)), b=targets)

    def objective(self, theta) -> float:
        diff = np.asarray(theta) - self.centers
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1))) + 0.5 * self.dim * self.noise ** 2

    @property
    def optimum_value(self) -> float:
        return self.objective(self.theta_star)

    def gradient(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float) - self.theta_star

    def gap(self, theta) -> float:
        diff = np.asarray(theta) - self.theta_star
        return 0.5 * float(diff @ diff)

    def grad_l1_bound(self) -> float:
        if self.spec.grad_bound is None:
            raise ConfigurationError("quadratic problems need an explicit grad_bound (d_l)")
        warnings.warn("quadratic gradients are unbounded globally; d_l is only valid on the iterate region",
                      RuntimeWarning)
        return float(self.spec.grad_bound)

    def replacement(self, t: int, i: int, rng: np.random.Generator) -> Batch:
        """A fresh batch from the same stream distribution, for adjacency tests."""
        targets = self.centers[i] + self.noise * rng.standard_normal((self.batch, self.dim))
        return Batch(a=np.zeros((self.batch, 0)), b=targets)


def _split_generated(params: dict, test_points: int):
    """Training corpus plus a held-out tail drawn from the same planted separator."""
    n = params["n"]
    A, b, _ = generate_separable(**dict(params, n=n + test_points))
    return A[:n], b[:n], A[n:], b[n:]


class LogisticProblem(Problem):
    kind = "logistic"

    def __init__(self, spec: ProblemSpec, m: int, seed: int):
        self.spec = spec
        self.m, self.seed, self.batch = m, seed, spec.batch
        test_seed = seed
        if spec.synthetic is not None:
            params = dict(spec.synthetic)
            params.setdefault("dim", spec.dim)
            self.A, self.b, self.A_test, self.b_test = _split_generated(params, spec.test_points)
        else:
            path = spec.corpus or SHIPPED_CORPUS
            self.A, self.b = load_corpus(path)
            if Path(path).resolve() == SHIPPED_CORPUS.resolve():
                *_, self.A_test, self.b_test = _split_generated(SHIPPED_CORPUS_PARAMS, spec.test_points)
            else:
                idx = np.random.default_rng([test_seed, 0x7E57]).integers(0, len(self.b), spec.test_points)
                self.A_test, self.b_test = self.A[idx], self.b[idx]
        if self.A.shape[0] == 0:
            raise ConfigurationError("empty corpus")
        self.dim = self.A.shape[1]
        if self.dim != spec.dim:
            raise ConfigurationError(f"corpus has {self.dim} features but problem dim is {spec.dim}")

    def draw(self, t: int, i: int) -> Batch:
        rng = _point_rng(self.seed, _DATA_TAG, i, t)
        idx = rng.integers(0, len(self.b), self.batch)
        return Batch(a=self.A[idx].copy(), b=self.b[idx].copy())

    def replacement(self, t: int, i: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, len(self.b), self.batch)
        return Batch(a=self.A[idx].copy(), b=self.b[idx].copy())

    def objective(self, theta) -> float:
        theta = np.ascontiguousarray(theta, dtype=float)
        return float(np.mean(kernels.logistic_losses(self.A, self.b, theta)))

    @property
    def optimum_value(self) -> float:
        return logistic_optimum(self.A, self.b)

    def gradient(self, theta) -> np.ndarray:
        s = sigmoid(-self.b * (self.A @ theta))
        return -(self.A.T @ (self.b * s)) / len(self.b)

    def gap(self, theta) -> float:
        return self.objective(theta) - self.optimum_value

    def accuracy(self, theta) -> float:
        pred = np.where(self.A_test @ np.asarray(theta) >= 0, 1.0, -1.0)
        return float(np.mean(pred == self.b_test))

    def grad_l1_bound(self) -> float:
        return grad_l1_bound(self.A)


def build_problem(spec: ProblemSpec, m: int, seed: int) -> Problem:
    if spec.kind == "quadratic":
        return QuadraticProblem(spec, m, seed)
    return LogisticProblem(spec, m, seed)

"""Measurement-budget planning.

The budget model is ``K(n) = a * n**b + c`` with ``a = 8.6e-14``,
``b = 14.31``, ``c = 1.82``, rounded up so the budget is never short.
"""

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from .mvnet import LossConfig, TrainConfig, evaluate, train


@dataclass(frozen=True)
class KFormula:
    a: float = 8.6e-14
    b: float = 14.31
    c: float = 1.82

    def __post_init__(self):
        if not (self.a > 0 and self.b > 1 and self.c >= 0):
            raise ValueError(f"invalid power-law coefficients {self}")

    def value(self, n):
        return self.a * math.exp(self.b * math.log(n)) + self.c

    def __call__(self, n):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        return math.ceil(self.value(n))


DEFAULT_FORMULA = KFormula()


def k_formula(n, formula=DEFAULT_FORMULA):
    """Recommended number of global Pauli measurements for ``n`` qubits."""
    return formula(n)


def qst_measurements(n):
    """``4**n - 1``, exact."""
    return 4 ** int(n) - 1


def cs_qst_measurements(n, r=1):
    """Compressed-sensing scaling curve ``r * 2**n * ln(2**n)`` (unitless)."""
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    return r * 2.0 ** n * n * math.log(2.0)


def reduction_factor(n, formula=DEFAULT_FORMULA):
    return qst_measurements(n) / k_formula(n, formula)


def input_size(n):
    """Width of one encoded view: ``3n`` Pauli code plus ``2**n`` probabilities."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 3 * n + 2 ** n


RESOURCE_COLUMNS = ("n", "K", "QST", "CS-QST", "reduction", "input_size")


def resource_table(n_values, rank=1, formula=DEFAULT_FORMULA):
    return [
        {
            "n": n,
            "K": k_formula(n, formula),
            "QST": qst_measurements(n),
            "CS-QST": cs_qst_measurements(n, rank),
            "reduction": reduction_factor(n, formula),
            "input_size": input_size(n),
        }
        for n in n_values
    ]


def format_rows(rows, columns, fmt="table"):
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if row[c] is None else row[c] for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# K sweeps

SWEEP_COLUMNS = ("n", "K", "test_accuracy", "threshold", "k_min")


@dataclass
class SweepResult:
    n: int
    threshold: float
    entries: list = field(default_factory=list)  # (K, test accuracy), ascending K

    @property
    def k_min(self):
        for k, acc in self.entries:
            if acc >= self.threshold:
                return k
        return None

    def rows(self):
        return [{"n": self.n, "K": k, "test_accuracy": acc, "threshold": self.threshold,
                 "k_min": self.k_min} for k, acc in self.entries]

    def to_csv(self):
        return format_rows(self.rows(), SWEEP_COLUMNS).replace("\t", ",")


def k_sweep(n, k_values, threshold=0.975, samples_per_class=100, pool_size=None,
            num_classes=None, shots=0, seed=None, train_cfg=TrainConfig(),
            loss_cfg=LossConfig(), workers=1, progress=None):
    """Test accuracy as a function of the measurement budget ``K``.

    Views for budget ``K`` are the first ``K`` pool strings; the dataset is
    generated once at ``max(k_values)`` and truncated, which yields exactly
    the records a dedicated generation at ``K`` would.
    """
    k_values = [int(k) for k in k_values]
    if not k_values or any(b <= a for a, b in zip(k_values, k_values[1:])) or k_values[0] < 1:
        raise ValueError(f"k_values must be strictly ascending positive integers, got {k_values}")
    manifest = ds.make_manifest(n, k_values[-1], samples_per_class, pool_size, num_classes,
                                shots, seed)
    records = ds.generate_dataset(manifest, workers=workers)
    tr, va, te = ds.split_dataset(records, manifest.split_ratios, manifest.master_seed)
    arrays = [ds.to_arrays(part, train_cfg.dtype) for part in (tr, va, te)]
    result = SweepResult(n, threshold)
    for k in k_values:
        try:
            (xt, yt), (xv, yv), (xs, ys) = [(x[:, :k], y) for x, y in arrays]
            fit = train((xt, yt), (xv, yv), train_cfg, loss_cfg, n=n,
                        num_classes=manifest.num_classes)
            acc = evaluate(fit.params, xs, ys).accuracy
        except Exception as exc:
            raise RuntimeError(f"k-sweep failed at n={n}, K={k}: {exc}") from exc
        result.entries.append((k, acc))
        if progress is not None:
            progress(n, k, acc)
    return result


def read_points(text):
    """``(n, k)`` pairs from a CSV with columns ``n`` and ``k`` or ``k_min``.

    Sweep CSVs repeat ``k_min`` on every row; rows without one are skipped.
    """
    reader = csv.DictReader(io.StringIO(text))
    cols = reader.fieldnames or []
    key = "k" if "k" in cols else "k_min" if "k_min" in cols else None
    if "n" not in cols or key is None:
        raise ValueError("points CSV needs an 'n' column and a 'k' or 'k_min' column")
    points = {}
    for row in reader:
        if row[key] in ("", None):
            continue
        n, k = int(row["n"]), float(row[key])
        if n in points and points[n] != k:
            raise ValueError(f"conflicting k values for n={n}")
        points[n] = k
    return sorted(points.items())


# ---------------------------------------------------------------------------
# Power-law fit


@dataclass
class PowerLawFit:
    a: float
    b: float
    c: float
    residual_norm: float
    converged: bool
    iterations: int = 0

    def value(self, n):
        return self.a * np.power(np.asarray(n, dtype=float), self.b) + self.c

    def k_values(self, ns):
        return [math.ceil(v) for v in np.atleast_1d(self.value(ns))]


def _residuals(a, b, c, n, k):
    return a * np.power(n, b) + c - k


def _grid_start(n, k, b_grid, c_steps):
    best = None
    c_grid = np.linspace(0.0, max(k.min(), 0.0), c_steps)
    for b in b_grid:
        x = np.power(n, b)
        for c in c_grid:
            a = float(np.dot(x, k - c) / np.dot(x, x))
            a = max(a, 1e-300)
            sse = float(np.sum(_residuals(a, b, c, n, k) ** 2))
            if best is None or sse < best[0]:
                best = (sse, a, b, c)
    return best[1:]


def fit_power_law(points, b_grid=None, c_steps=41, max_iter=500, tol=1e-14):
    """Least-squares fit of ``k = a * n**b + c``.

    A coarse grid over ``(b, c)`` (with ``a`` solved in closed form) seeds a
    Levenberg-damped Gauss-Newton refinement in ``(log a, b, c)``.
    ``converged`` is False, with a warning, if the refinement stalls; the
    best point found is returned either way.
    """
    pts = sorted((float(n), float(k)) for n, k in points)
    n = np.array([p[0] for p in pts])
    k = np.array([p[1] for p in pts])
    if len(n) < 4 or len(np.unique(n)) != len(n):
        raise ValueError("need at least 4 points with distinct n")
    if np.any(n <= 0):
        raise ValueError("n must be positive")
    b_grid = np.linspace(1.0, 25.0, 241) if b_grid is None else b_grid
    a, b, c = _grid_start(n, k, b_grid, c_steps)
    theta = np.array([math.log(a), b, c])
    ln_n = np.log(n)

    def sse_of(t):
        return float(np.sum(_residuals(math.exp(t[0]), t[1], max(t[2], 0.0), n, k) ** 2))

    sse = sse_of(theta)
    damping, converged, it = 1e-3, False, 0
    scale = max(float(np.sum(k ** 2)), 1e-300)
    for it in range(1, max_iter + 1):
        if sse <= tol * scale:
            converged = True
            break
        ea = math.exp(theta[0])
        xb = np.power(n, theta[1])
        r = ea * xb + theta[2] - k
        jac = np.column_stack([ea * xb, ea * xb * ln_n, np.ones_like(n)])
        jtj, jtr = jac.T @ jac, jac.T @ r
        improved = False
        while damping < 1e12:
            lhs = jtj + damping * np.diag(np.diag(jtj) + 1e-30)
            try:
                step = np.linalg.solve(lhs, -jtr)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            cand = theta + step
            cand[2] = max(cand[2], 0.0)
            cand_sse = sse_of(cand)
            if np.isfinite(cand_sse) and cand_sse < sse:
                improved = True
                rel = (sse - cand_sse) / max(sse, 1e-300)
                theta, sse = cand, cand_sse
                damping = max(damping / 3.0, 1e-12)
                break
            damping *= 4.0
        # no damped step lowers the error: stationary to working precision
        if not improved or rel < tol:
            converged = True
            break
    if not converged:
        warnings.warn("power-law refinement did not converge; returning best point found",
                      RuntimeWarning, stacklevel=2)
    return PowerLawFit(math.exp(theta[0]), float(theta[1]), float(max(theta[2], 0.0)),
                       math.sqrt(sse), bool(converged), it)

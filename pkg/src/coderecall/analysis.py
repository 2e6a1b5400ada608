"""Aggregation and statistics over evaluation records.

Positional accuracy curves (mean per context slot, plus relative-to-max
normalization), max-to-min drop summaries, exponential decay fits
``y = a * exp(-b * x) + c`` by weighted nonlinear least squares, and
cluster bootstrap confidence intervals. Records are consumed as plain
dicts in their persisted (JSONL) form so stored run logs can be analyzed
without re-querying anything.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

B_STARTS = (0.5, 2.0, 8.0, 32.0)
MAX_ITERATIONS = 500
REL_TOL = 1e-10
OBJECTIVE_FLOOR = 1e-24


class AnalysisError(ValueError):
    """Bad grouping keys or degenerate statistical input."""


# -- positional curves --------------------------------------------------------


@dataclass(frozen=True)
class PositionalCurve:
    model: str
    task_type: str
    distractor_count: int
    metric: str  # "exact" | "partial"
    means: tuple[float, ...]
    ns: tuple[int, ...]

    @property
    def positions(self) -> int:
        return len(self.means)

    @property
    def relative(self) -> tuple[float, ...] | None:
        """Means over the curve maximum; None when the whole curve is zero."""
        best = max(self.means)
        if best <= 0:
            return None
        return tuple(m / best for m in self.means)

    @property
    def argmax_position(self) -> int:
        best = max(self.means)
        return self.means.index(best)  # earliest position wins ties


def _record_metrics(record: dict) -> dict[str, float | None]:
    score = record.get("score") or {}
    exact = 1.0 if score.get("exact") else 0.0
    partial = score.get("partial")
    return {"exact": exact, "partial": partial}


def aggregate(records: Iterable[dict]) -> list[PositionalCurve]:
    """Unweighted mean accuracy per (model, task, count, metric, position)."""
    sums: dict[tuple, list] = {}
    for record in records:
        if record.get("error"):
            # failed calls carry no score; they are reported, not averaged
            continue
        positions = record["positions"]
        base = (record["model"], record["task_type"], record["distractor_count"])
        for metric, value in _record_metrics(record).items():
            if value is None:
                continue
            key = base + (metric,)
            bucket = sums.setdefault(key, [np.zeros(positions), np.zeros(positions, dtype=int)])
            bucket[0][record["position_index"]] += value
            bucket[1][record["position_index"]] += 1
    curves: list[PositionalCurve] = []
    for key in sorted(sums):
        totals, counts = sums[key]
        if counts.sum() == 0:
            log.warning("empty aggregation group %s", key)
            continue
        means = tuple(float(t / c) if c else 0.0 for t, c in zip(totals, counts))
        curves.append(
            PositionalCurve(
                model=key[0],
                task_type=key[1],
                distractor_count=key[2],
                metric=key[3],
                means=means,
                ns=tuple(int(c) for c in counts),
            )
        )
    return curves


def lim_stats(curve: PositionalCurve) -> dict:
    """Max/min summary: drop in percentage points and relative to the max."""
    if not curve.means:
        raise AnalysisError("empty curve")
    best = max(curve.means)
    worst = min(curve.means)
    stats = {
        "max": best,
        "min": worst,
        "drop_pp": 100.0 * (best - worst),
        "drop_rel": (best - worst) / best if best > 0 else None,
    }
    if best == 0:
        stats["note"] = "all-zero curve; relative drop undefined"
    return stats


# -- exponential decay fit ----------------------------------------------------


@dataclass
class DecayFit:
    a: float
    b: float
    c: float
    residual_norm: float
    converged: bool
    iterations: int
    note: str | None = None
    param_ci: dict[str, tuple[float, float]] | None = None
    point_ci: list[dict] | None = None

    def predict(self, x):
        return self.a * np.exp(-self.b * np.asarray(x, dtype=float)) + self.c

    def to_dict(self) -> dict:
        out = {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "model": "a*exp(-b*x)+c",
        }
        if self.note:
            out["note"] = self.note
        if self.param_ci:
            out["param_ci"] = {k: list(v) for k, v in self.param_ci.items()}
        if self.point_ci:
            out["point_ci"] = self.point_ci
        return out


def _project(params: np.ndarray) -> np.ndarray:
    a, b, c = params
    return np.array([max(a, 0.0), max(b, 0.0), min(max(c, 0.0), 1.0)])


def _objective(params: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    a, b, c = params
    r = y - (a * np.exp(-b * x) + c)
    return float(np.sum(w * r * r))


def _linear_ac(b: float, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """Weighted least squares for (a, c) at fixed b (the model is linear there)."""
    e = np.exp(-b * x)
    sw = np.sum(w)
    swe = np.sum(w * e)
    swee = np.sum(w * e * e)
    swy = np.sum(w * y)
    swey = np.sum(w * e * y)
    det = swee * sw - swe * swe
    if abs(det) < 1e-18:
        return 0.0, float(swy / sw) if sw else 0.0
    a = (swey * sw - swe * swy) / det
    c = (swee * swy - swe * swey) / det
    return float(a), float(c)


def fit_exponential(
    points: Sequence[tuple[float, float]],
    weights: Sequence[float] | None = None,
    *,
    b_starts: Sequence[float] = B_STARTS,
    max_iterations: int = MAX_ITERATIONS,
    rel_tol: float = REL_TOL,
    objective_trace: list[float] | None = None,
) -> DecayFit:
    """Weighted NLS fit of a*exp(-b*x)+c with box constraints.

    Projected Levenberg-Marquardt: steps are accepted only when they lower
    the objective (the per-iteration objective is therefore non-increasing
    by construction), parameters are projected into a >= 0, b >= 0,
    0 <= c <= 1 after every step, and the best of the multi-start over b
    wins. Convergence: relative objective change below ``rel_tol`` or the
    iteration cap.
    """
    if len(points) < 4 or len({x for x, _ in points}) < 4:
        raise AnalysisError("need at least 4 distinct x values to fit")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    w = np.ones_like(x) if weights is None else np.array(weights, dtype=float)
    if w.shape != x.shape or np.any(w < 0) or not np.any(w > 0):
        raise AnalysisError("weights must be non-negative and match the points")

    if float(np.ptp(y)) == 0.0:
        return DecayFit(a=0.0, b=0.0, c=float(np.clip(y[0], 0.0, 1.0)), residual_norm=0.0,
                        converged=True, iterations=0, note="constant data; a=0 fit")

    best: tuple[float, np.ndarray, bool, int] | None = None
    for b0 in b_starts:
        a0, c0 = _linear_ac(b0, x, y, w)
        params = _project(np.array([a0, b0, c0]))
        obj = _objective(params, x, y, w)
        if objective_trace is not None:
            objective_trace.append(obj)
        lam = 1e-3
        converged = False
        iteration = 0
        while iteration < max_iterations:
            iteration += 1
            a, b, c = params
            e = np.exp(-b * x)
            r = y - (a * e + c)
            jac = np.column_stack([e, -a * x * e, np.ones_like(x)])
            jtw = jac.T * w
            hess = jtw @ jac
            grad = jtw @ r
            try:
                step = np.linalg.solve(hess + lam * np.diag(np.diag(hess)) + 1e-15 * np.eye(3), grad)
            except np.linalg.LinAlgError:
                break
            candidate = _project(params + step)
            cand_obj = _objective(candidate, x, y, w)
            if cand_obj < obj:
                improvement = obj - cand_obj
                params, obj = candidate, cand_obj
                if objective_trace is not None:
                    objective_trace.append(obj)
                lam = max(lam / 3.0, 1e-12)
                if obj < OBJECTIVE_FLOOR or improvement <= rel_tol * max(obj, OBJECTIVE_FLOOR):
                    converged = True
                    break
            else:
                lam *= 10.0
                if lam > 1e12:
                    converged = True  # no descent direction left at this damping
                    break
        # polish (a, c) exactly at the final b
        a_fin, c_fin = _linear_ac(float(params[1]), x, y, w)
        polished = _project(np.array([a_fin, params[1], c_fin]))
        if _objective(polished, x, y, w) <= obj:
            params, obj = polished, _objective(polished, x, y, w)
        if best is None or obj < best[0]:
            best = (obj, params, converged, iteration)

    assert best is not None
    obj, params, converged, iterations = best
    return DecayFit(
        a=float(params[0]),
        b=float(params[1]),
        c=float(params[2]),
        residual_norm=float(np.sqrt(obj)),
        converged=converged,
        iterations=iterations,
    )


# -- bootstrap ----------------------------------------------------------------


def _order_statistic_interval(values: Sequence[float], level: float) -> tuple[float, float]:
    """Percentile interval whose endpoints are order statistics (no interpolation)."""
    ordered = sorted(values)
    n = len(ordered)
    alpha = (1.0 - level) / 2.0
    lo_rank = max(1, int(np.ceil(alpha * n)))
    hi_rank = max(1, int(np.ceil((1.0 - alpha) * n)))
    return ordered[lo_rank - 1], ordered[hi_rank - 1]


def bootstrap_ci(
    clusters: Sequence[Sequence],
    statistic: Callable[[list], float],
    n_replicates: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Cluster bootstrap percentile interval for a scalar statistic.

    A cluster (a target function with all its variants/positions) is the
    resampling unit, because rows within one function are dependent.
    Returns (point estimate, low, high); the interval is widened to the
    point estimate if a skewed replicate distribution would exclude it.
    """
    if n_replicates < 100:
        raise AnalysisError("need at least 100 bootstrap replicates")
    if len(clusters) < 2:
        raise AnalysisError("need at least 2 clusters to bootstrap")
    rng = SplitMix64(derive_seed(seed, "bootstrap"))
    point = statistic([row for cluster in clusters for row in cluster])
    stats: list[float] = []
    for _ in range(n_replicates):
        resampled: list = []
        for _ in range(len(clusters)):
            resampled.extend(clusters[rng.below(len(clusters))])
        stats.append(statistic(resampled))
    low, high = _order_statistic_interval(stats, level)
    return point, min(low, point), max(high, point)


def bootstrap_decay_fit(
    clusters: Sequence[Sequence[tuple[float, float]]],
    n_replicates: int = 200,
    level: float = 0.95,
    seed: int = 0,
    *,
    grid: Sequence[float] | None = None,
) -> DecayFit:
    """Fit plus bootstrap CIs for the parameters and the fitted curve.

    Each cluster holds (x, y) rows for one target function. Replicates
    resample clusters with replacement and refit, warm-started at the point
    estimate's decay rate for speed.
    """
    if n_replicates < 100:
        raise AnalysisError("need at least 100 bootstrap replicates")
    if len(clusters) < 2:
        raise AnalysisError("need at least 2 clusters to bootstrap")
    all_points = [p for cluster in clusters for p in cluster]
    fit = fit_exponential(all_points)
    rng = SplitMix64(derive_seed(seed, "bootstrap-fit"))
    warm_starts = (fit.b if fit.b > 0 else 1.0, 2.0)
    grid_x = sorted({x for x, _ in all_points}) if grid is None else list(grid)

    replicate_params: list[tuple[float, float, float]] = []
    replicate_curves: list[np.ndarray] = []
    for _ in range(n_replicates):
        resampled: list[tuple[float, float]] = []
        for _ in range(len(clusters)):
            resampled.extend(clusters[rng.below(len(clusters))])
        if len({x for x, _ in resampled}) < 4:
            continue
        try:
            refit = fit_exponential(resampled, b_starts=warm_starts)
        except AnalysisError:
            continue
        replicate_params.append((refit.a, refit.b, refit.c))
        replicate_curves.append(refit.predict(grid_x))
    if len(replicate_params) < 100:
        raise AnalysisError("too many degenerate bootstrap replicates")

    named = dict(zip("abc", zip(*replicate_params)))
    point = {"a": fit.a, "b": fit.b, "c": fit.c}
    fit.param_ci = {}
    for name, values in named.items():
        low, high = _order_statistic_interval(values, level)
        fit.param_ci[name] = (min(low, point[name]), max(high, point[name]))
    curve_matrix = np.vstack(replicate_curves)
    fit.point_ci = []
    for j, x_value in enumerate(grid_x):
        low, high = _order_statistic_interval(curve_matrix[:, j].tolist(), level)
        fitted = float(fit.predict(x_value))
        fit.point_ci.append(
            {"x": float(x_value), "fit": fitted, "low": min(low, fitted), "high": max(high, fitted)}
        )
    return fit


# -- export -------------------------------------------------------------------

CURVE_CSV_HEADER = [
    "model", "task_type", "distractor_count", "metric",
    "position_index", "mean", "n", "relative",
]


def curve_rows(curve: PositionalCurve) -> list[dict]:
    relative = curve.relative
    rows = []
    for position, (mean, n) in enumerate(zip(curve.means, curve.ns)):
        rows.append(
            {
                "model": curve.model,
                "task_type": curve.task_type,
                "distractor_count": curve.distractor_count,
                "metric": curve.metric,
                "position_index": position,
                "mean": mean,
                "n": n,
                "relative": None if relative is None else relative[position],
            }
        )
    return rows


def export_curves(curves: Sequence[PositionalCurve], out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """One plot-ready file per (model, task, count); returns written paths."""
    if fmt not in ("csv", "jsonl"):
        raise AnalysisError(f"unsupported export format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_file: dict[tuple, list[PositionalCurve]] = {}
    for curve in curves:
        by_file.setdefault((curve.model, curve.task_type, curve.distractor_count), []).append(curve)
    written: list[Path] = []
    for (model, task_type, count), group in sorted(by_file.items()):
        safe_model = model.replace("/", "_").replace(" ", "_")
        path = out / f"{safe_model}_{task_type}_{count}.{fmt}"
        rows = [row for curve in group for row in curve_rows(curve)]
        if fmt == "csv":
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=CURVE_CSV_HEADER)
                writer.writeheader()
                writer.writerows(rows)
        else:
            with path.open("w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(json.dumps(row) + "\n")
        written.append(path)
    return written


def curves_from_jsonl(path: str | Path) -> list[PositionalCurve]:
    """Rebuild curves from an exported JSONL file (round-trip support)."""
    grouped: dict[tuple, dict[int, tuple[float, int]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            key = (row["model"], row["task_type"], row["distractor_count"], row["metric"])
            grouped.setdefault(key, {})[row["position_index"]] = (row["mean"], row["n"])
    curves = []
    for key in sorted(grouped):
        positions = grouped[key]
        means = tuple(positions[p][0] for p in sorted(positions))
        ns = tuple(positions[p][1] for p in sorted(positions))
        curves.append(PositionalCurve(model=key[0], task_type=key[1], distractor_count=key[2],
                                      metric=key[3], means=means, ns=ns))
    return curves


def export_fits(fits: dict[str, DecayFit], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for name, fit in sorted(fits.items()):
            fh.write(json.dumps({"name": name, **fit.to_dict()}) + "\n")
    return path

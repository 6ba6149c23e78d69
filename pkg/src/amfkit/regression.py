"""Repeated random-split linear regression, RMSE scoring and the Wilcoxon signed-rank test."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

EXACT_MAX_N = 25


class AllZeroDifferencesError(ValueError):
    """Paired samples are identical; the signed-rank test is undefined."""


@dataclass(frozen=True)
class EvaluationConfig:
    n_iter: int = 50
    train_fraction: float = 0.8
    rng_seed: int = 0
    ridge: float = 1e-6
    alpha: float = 0.05

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")


@dataclass(frozen=True)
class SpecimenRecord:
    specimen_id: str
    features: Mapping[str, float]
    failure_load: float

    def __post_init__(self):
        if not self.failure_load > 0:
            raise ValueError(f"{self.specimen_id}: failure load must be positive")
        if not all(math.isfinite(v) for v in self.features.values()):
            raise ValueError(f"{self.specimen_id}: non-finite feature value")


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    intercept: float


@dataclass
class RMSEDistribution:
    name: str
    values: np.ndarray
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mean = float(self.values.mean())
        self.std = float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0


# --------------------------------------------------------------------------
# regression

def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def fit_linear(X, y, ridge: float = 1e-6) -> LinearModel:
    """Least squares with an unpenalised intercept: min |Xw + b - y|^2 + ridge |w|^2.

    Solved as an augmented least-squares problem on centred data (SVD via
    ``lstsq``), which also returns the minimum-norm solution when ridge = 0
    and the system is rank deficient.
    """
    X = _as_design(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if n < 2 or len(y) != n:
        raise ValueError(f"need >= 2 samples with matching targets, got X {X.shape}, y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in regression input")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    A = X - x_mean
    b = y - y_mean
    if ridge > 0:
        A = np.vstack([A, math.sqrt(ridge) * np.eye(d)])
        b = np.concatenate([b, np.zeros(d)])
    w = np.linalg.lstsq(A, b, rcond=None)[0]
    return LinearModel(w, float(y_mean - x_mean @ w))


def predict(model: LinearModel, X) -> np.ndarray:
    X = _as_design(X)
    if X.shape[1] != model.weights.shape[0]:
        raise ValueError(f"model has {model.weights.shape[0]} weights, X has {X.shape[1]} columns")
    return X @ model.weights + model.intercept


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise ValueError(f"length mismatch: {pred.size} predictions, {truth.size} targets")
    if pred.size == 0:
        raise ValueError("rmse of empty arrays")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def paired_splits(n: int, config: EvaluationConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Train/test index sets, a pure function of (n, seed, n_iter, train_fraction)."""
    rng = np.random.default_rng(config.rng_seed)
    n_train = int(round(config.train_fraction * n))
    n_train = min(max(n_train, 2), n - 1)
    splits = []
    for _ in range(config.n_iter):
        perm = rng.permutation(n)
        splits.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return splits


def split_digest(splits) -> str:
    h = hashlib.sha256()
    for train, test in splits:
        h.update(np.asarray(train, dtype="<i8").tobytes())
        h.update(b"|")
        h.update(np.asarray(test, dtype="<i8").tobytes())
        h.update(b";")
    return h.hexdigest()


MIN_RECORDS = 10


def evaluate_design(X, y, config: EvaluationConfig, name: str = "") -> RMSEDistribution:
    """RMSE on the held-out part of each of the n_iter paired splits."""
    X = _as_design(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) < MIN_RECORDS:
        raise ValueError(f"need at least {MIN_RECORDS} records, got {len(y)}")
    values = []
    for train, test in paired_splits(len(y), config):
        model = fit_linear(X[train], y[train], config.ridge)
        values.append(rmse(predict(model, X[test]), y[test]))
    return RMSEDistribution(name, np.array(values))


def evaluate_feature_set(records: Sequence[SpecimenRecord], columns: Sequence[str],
                         config: EvaluationConfig, name: Optional[str] = None) -> RMSEDistribution:
    X = np.array([[r.features[c] for c in columns] for r in records], dtype=np.float64)
    y = np.array([r.failure_load for r in records])
    return evaluate_design(X.reshape(len(records), len(columns)), y, config, name or "+".join(columns))


# --------------------------------------------------------------------------
# Wilcoxon signed-rank

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float     # sum of ranks of positive differences a - b
    p_value: float
    n: int               # non-zero differences
    method: str          # "exact" or "normal"
    z: Optional[float] = None


def _exact_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[s] = number of sign assignments whose positive doubled-rank sum is s."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired signed-rank test of ``a - b``.

    Zero differences are dropped and tied |differences| share midranks.  Up
    to 25 remaining pairs the p-value comes from the exact permutation
    distribution of the positive-rank sum; beyond that from the normal
    approximation with tie-corrected variance (no continuity correction).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferencesError("all paired differences are zero")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_null_counts(doubled)
        s = int(round(2 * w_plus))
        total = float(2 ** n)
        lower = counts[:s + 1].sum() / total
        upper = counts[s:].sum() / total
        return WilcoxonResult(w_plus, float(min(1.0, 2 * min(lower, upper))), n, "exact")
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    z = (w_plus - mu) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(w_plus, float(min(1.0, p)), n, "normal", z)


# --------------------------------------------------------------------------
# Table-1-style report

BASELINE = "mean_bmd"


@dataclass
class ReportRow:
    feature_set: str
    n_features: int
    rmse: RMSEDistribution
    p_value: Optional[float] = None
    statistic: Optional[float] = None
    test_method: Optional[str] = None
    test_error: Optional[str] = None
    baseline: bool = False
    best: bool = False


@dataclass
class EvaluationReport:
    rows: list[ReportRow]
    config: EvaluationConfig
    split_digest: str
    config_hash: Optional[str] = None

    def row(self, name: str) -> ReportRow:
        return next(r for r in self.rows if r.feature_set == name)

    @property
    def best(self) -> ReportRow:
        return next(r for r in self.rows if r.best)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "evaluation": {
                "n_iter": self.config.n_iter,
                "train_fraction": self.config.train_fraction,
                "rng_seed": self.config.rng_seed,
                "ridge": self.config.ridge,
                "alpha": self.config.alpha,
            },
            "split_digest": self.split_digest,
            "baseline": BASELINE,
            "best": self.best.feature_set,
            "rows": [
                {
                    "feature_set": r.feature_set,
                    "n_features": r.n_features,
                    "rmse": [float(v) for v in r.rmse.values],
                    "rmse_mean": r.rmse.mean,
                    "rmse_std": r.rmse.std,
                    "wilcoxon_statistic": r.statistic,
                    "wilcoxon_p": r.p_value,
                    "wilcoxon_method": r.test_method,
                    "wilcoxon_error": r.test_error,
                    "significant": (r.p_value is not None and r.p_value < self.config.alpha),
                    "baseline": r.baseline,
                    "best": r.best,
                }
                for r in self.rows
            ],
        }

    def csv_rows(self) -> list[list[str]]:
        out = [["feature_set", "rmse_mean", "rmse_std", "wilcoxon_p_vs_baseline", "baseline", "best"]]
        for r in self.rows:
            p = "" if r.p_value is None else repr(r.p_value)
            out.append([r.feature_set, repr(r.rmse.mean), repr(r.rmse.std), p,
                        str(int(r.baseline)), str(int(r.best))])
        return out

    def format_table(self) -> str:
        lines = [f"{'feature set':<24} {'RMSE (kN)':>18} {'p vs baseline':>14}"]
        for r in self.rows:
            tag = " (baseline)" if r.baseline else (" *best*" if r.best else "")
            if r.baseline:
                p = "-"
            elif r.p_value is None:
                p = "n/a"
            else:
                p = f"{r.p_value:.3g}"
            lines.append(f"{r.feature_set:<24} {r.rmse.mean:>8.3f} ± {r.rmse.std:<7.3f} {p:>14}{tag}")
        return "\n".join(lines)


def evaluation_report(sets: Mapping[str, np.ndarray], y, config: EvaluationConfig,
                      config_hash: Optional[str] = None) -> EvaluationReport:
    """Evaluate each named design matrix on identical splits and test against the baseline.

    `sets` must contain ``"mean_bmd"``; row order follows the mapping order.
    """
    if BASELINE not in sets:
        raise ValueError(f"feature sets must include the {BASELINE!r} baseline")
    y = np.asarray(y, dtype=np.float64)
    dists = {name: evaluate_design(X, y, config, name) for name, X in sets.items()}
    base = dists[BASELINE]
    rows = []
    for name, X in sets.items():
        row = ReportRow(name, _as_design(X).shape[1], dists[name], baseline=(name == BASELINE))
        if name != BASELINE:
            try:
                res = wilcoxon_signed_rank(dists[name].values, base.values)
                row.p_value, row.statistic, row.test_method = res.p_value, res.statistic, res.method
            except AllZeroDifferencesError as exc:
                row.test_error = f"all_zero_differences: {exc}"
        rows.append(row)
    best = min(rows, key=lambda r: r.rmse.mean)
    best.best = True
    digest = split_digest(paired_splits(len(y), config))
    return EvaluationReport(rows, config, digest, config_hash)

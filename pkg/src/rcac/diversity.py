"""State-visitation diversity: k-NN entropy and occupancy-grid coverage.

The entropy estimate (Kozachenko-Leonenko form) for n points in d dimensions is

    H = (d / n) * sum_i log eps_i + log(n - 1) - digamma(k) + log V_d

where eps_i is the Euclidean distance from point i to its k-th nearest
neighbour (itself excluded) and V_d = pi^(d/2) / Gamma(d/2 + 1) is the
volume of the unit d-ball. The estimate is in nats.

Both measures run over ground-truth environment states recorded during
training (``visits.csv``), never over learned embeddings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from rcac.errors import ConfigurationError

# columns compared by default, and the box the occupancy grid covers
DEFAULT_COLUMNS = {
    ("x", "y"): ((-1.0, 1.0), (-1.0, 1.0)),
    ("angle", "angvel"): ((-math.pi, math.pi), (-8.0, 8.0)),
}
CHUNK = 512


@dataclass
class EntropyEstimate:
    value: float
    degenerate: bool  # some k-th neighbour distance was zero; value is -inf
    n: int
    d: int
    k: int


def log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d + 1.0))


def kth_neighbour_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Exact brute-force distance from each point to its k-th nearest other point.

    Squared distances are summed coordinate by coordinate from exact
    differences, so repeated points give a distance of exactly zero. The
    k-th distance does not depend on how equal-distance neighbours are ordered.
    """
    n, d = points.shape
    out = np.empty(n)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        d2 = np.zeros((hi - lo, n))
        for j in range(d):
            diff = points[lo:hi, j, None] - points[None, :, j]
            d2 += diff * diff
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.partition(d2, k - 1, axis=1)[:, k - 1]
    return np.sqrt(out)


def knn_entropy(states, k: int = 3, jitter: float = 0.0, rng=None) -> EntropyEstimate:
    """Differential entropy estimate of the distribution the states came from.

    Zero k-th neighbour distances (repeated states) make the estimate -inf;
    that case returns ``value=-inf`` with ``degenerate=True``. Passing
    ``jitter > 0`` adds uniform noise of that half-width first.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    if n < k + 1:
        raise ConfigurationError(f"need at least k + 1 = {k + 1} states, got {n}")
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        x = x + rng.uniform(-jitter, jitter, x.shape)
    eps = kth_neighbour_distances(x, k)
    if np.any(eps == 0.0):
        return EntropyEstimate(float("-inf"), True, n, d, k)
    value = (d / n) * float(np.log(eps).sum()) + math.log(n - 1) - float(digamma(k)) \
        + log_unit_ball_volume(d)
    return EntropyEstimate(value, False, n, d, k)


def occupancy_coverage(states, bounds, bins: int = 20) -> float:
    """Fraction of cells of a ``bins``-per-axis grid over ``bounds`` visited at least once.

    States outside the box count towards the nearest edge cell.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != len(bounds):
        raise ConfigurationError("bounds must give one (low, high) pair per column")
    cells = np.zeros(len(x), dtype=np.int64)
    for j, (low, high) in enumerate(bounds):
        idx = np.floor((x[:, j] - low) / (high - low) * bins).astype(np.int64)
        cells = cells * bins + np.clip(idx, 0, bins - 1)
    return len(np.unique(cells)) / bins ** len(bounds)


@dataclass
class VisitLog:
    steps: np.ndarray
    states: np.ndarray  # (n, number of columns)
    columns: tuple

    def __len__(self):
        return len(self.steps)

    @classmethod
    def read(cls, path, columns=None) -> "VisitLog":
        """Load a ``visits.csv`` (header ``step,<state names>``), keeping ``columns``.

        Without ``columns`` the first known default pair found in the header is used.
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        names = header[1:]
        if columns is None:
            columns = next((c for c in DEFAULT_COLUMNS if set(c) <= set(names)), tuple(names))
        missing = [c for c in columns if c not in names]
        if missing:
            raise ConfigurationError(f"{path}: no column(s) {', '.join(missing)}")
        pick = [header.index(c) for c in columns]
        data = np.array([[float(r[i]) for i in pick] for r in rows]).reshape(len(rows), len(pick))
        steps = np.array([int(r[0]) for r in rows], dtype=np.int64)
        return cls(steps, data, tuple(columns))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step",) + tuple(self.columns))
            for step, row in zip(self.steps, self.states):
                w.writerow([int(step)] + [repr(float(v)) for v in row])

    def concat(self, other: "VisitLog") -> "VisitLog":
        if self.columns != other.columns:
            raise ConfigurationError("visit logs have different columns")
        return VisitLog(np.concatenate([self.steps, other.steps]),
                        np.concatenate([self.states, other.states]), self.columns)


def default_bounds(columns):
    if tuple(columns) in DEFAULT_COLUMNS:
        return DEFAULT_COLUMNS[tuple(columns)]
    raise ConfigurationError(f"no default grid bounds for columns {columns}; pass bounds")


@dataclass
class CoverageReport:
    entropy_a: EntropyEstimate
    entropy_b: EntropyEstimate
    coverage_a: float
    coverage_b: float
    bins: int

    @property
    def entropy_difference(self) -> float:
        """Entropy of b minus entropy of a (0 when both are the same log)."""
        a, b = self.entropy_a.value, self.entropy_b.value
        if a == b:
            return 0.0
        return b - a

    @property
    def coverage_difference(self) -> float:
        return self.coverage_b - self.coverage_a

    def rows(self):
        return [("knn_entropy", self.entropy_a.value, self.entropy_b.value,
                 self.entropy_difference),
                ("grid_coverage", self.coverage_a, self.coverage_b, self.coverage_difference)]

    def write_csv(self, path, label_a="a", label_b="b"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("metric", label_a, label_b, f"{label_b}_minus_{label_a}"))
            for name, a, b, diff in self.rows():
                w.writerow((name, repr(float(a)), repr(float(b)), repr(float(diff))))


def coverage_report(log_a: VisitLog, log_b: VisitLog, k: int = 3, bins: int = 20,
                    bounds=None, max_points: int | None = None, jitter: float = 0.0,
                    seed: int = 0) -> CoverageReport:
    """Entropy and grid coverage of two visit logs.

    ``max_points`` thins each log to evenly spaced records before the
    (quadratic-cost) entropy estimate; coverage always uses every record.
    Long logs usually repeat a few states exactly (e.g. pinned against a
    wall), which makes the estimate ``-inf``; a small ``jitter`` avoids that.
    Both logs get noise from the same ``seed``.
    """
    if not len(log_a) or not len(log_b):
        raise ConfigurationError("visit logs must be non-empty")
    bounds = bounds or default_bounds(log_a.columns)

    def thin(states):
        if max_points and len(states) > max_points:
            return states[np.linspace(0, len(states) - 1, max_points).astype(np.int64)]
        return states

    def entropy(states):
        return knn_entropy(thin(states), k, jitter, np.random.default_rng(seed))

    return CoverageReport(entropy(log_a.states), entropy(log_b.states),
                          occupancy_coverage(log_a.states, bounds, bins),
                          occupancy_coverage(log_b.states, bounds, bins), bins)

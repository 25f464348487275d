"""Two-sample distances between score distributions.

Smaller is closer for all four measures. ``ks`` and ``kr`` work on the
empirical CDFs directly, ``es`` on empirical characteristic functions, and
``js`` on 10-bin histograms.
"""
from __future__ import annotations

import numpy as np

N_BINS = 10
ES_POINTS = (0.4, 0.8)
JS_EPSILON = 1e-9
ES_MIN_SAMPLES = 5
# edges k/10 for k=1..9 as doubles; bin k holds [k/10, (k+1)/10), 1.0 in the last bin
_BIN_EDGES = np.array([k / N_BINS for k in range(1, N_BINS)])


class DegenerateCovariance(ValueError):
    """The pooled sample is constant, so the ES statistic is undefined."""


def _samples(x) -> np.ndarray:
    s = getattr(x, "samples", x)
    s = np.sort(np.asarray(s, dtype=np.float64).ravel())
    if len(s) == 0:
        raise ValueError("empty sample")
    return s


def _ecdf_gaps(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return grid, np.abs(fa - fb)


def ks_distance(f, g) -> float:
    """Largest vertical gap between the two empirical CDFs.

    Both step functions are right-continuous and jump only at sample points,
    so the supremum is attained at one of the merged sample values.
    """
    _, gap = _ecdf_gaps(_samples(f), _samples(g))
    return float(gap.max())


def kr_distance(f, g) -> float:
    """Area between the two empirical CDFs (1-Wasserstein distance)."""
    grid, gap = _ecdf_gaps(_samples(f), _samples(g))
    return float(np.sum(np.diff(grid) * gap[:-1]))


def _semi_iqr(pooled: np.ndarray) -> float:
    q1, q3 = np.percentile(pooled, [25, 75])
    return float(q3 - q1) / 2.0


def es_distance(f, g, t=ES_POINTS, small_sample_correction: bool = True) -> float:
    """Epps-Singleton W^2 statistic.

    The empirical characteristic functions are compared at ``t`` divided by
    the semi-interquartile range of the pooled sample. When that range is
    zero (more than half the pooled scores tied) the pooled population
    standard deviation is the scale instead. The covariance is inverted with
    a pseudo-inverse. For ``max(n1, n2) < 25`` the statistic is multiplied by
    ``1 / (1 + n**-0.45 + 10.1 * (n1**-1.7 + n2**-1.7))``.
    """
    x = _samples(f)
    y = _samples(g)
    nx, ny = len(x), len(y)
    if min(nx, ny) < ES_MIN_SAMPLES:
        raise ValueError(f"ES needs at least {ES_MIN_SAMPLES} samples per side")
    n = nx + ny
    pooled = np.sort(np.concatenate([x, y]))
    scale = _semi_iqr(pooled)
    if not scale > 0:
        scale = float(np.std(pooled))
    if not scale > 1e-12:
        raise DegenerateCovariance("pooled sample is constant")
    ts = np.asarray(t, dtype=np.float64).reshape(-1, 1) / scale
    gx = np.vstack([np.cos(ts * x), np.sin(ts * x)]).T
    gy = np.vstack([np.cos(ts * y), np.sin(ts * y)]).T
    cov = (n / nx) * np.cov(gx.T, bias=True) + (n / ny) * np.cov(gy.T, bias=True)
    diff = gx.mean(axis=0) - gy.mean(axis=0)
    w = float(n * diff @ np.linalg.pinv(cov) @ diff)
    if small_sample_correction and max(nx, ny) < 25:
        w *= 1.0 / (1.0 + n ** -0.45 + 10.1 * (nx ** -1.7 + ny ** -1.7))
    return max(w, 0.0)


def bin_scores(scores) -> np.ndarray:
    """Ten-bin histogram of scores in [0, 1], normalised to probabilities."""
    s = _samples(scores)
    counts = np.bincount(np.searchsorted(_BIN_EDGES, s, side="right"), minlength=N_BINS)
    return counts / counts.sum()


def _kl2(p: np.ndarray, q: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log2(p[nz] / q[nz])))


def js_distance(p, q, eps: float = JS_EPSILON) -> float:
    """Base-2 Jensen-Shannon distance between two binned distributions.

    ``eps`` is added to every bin of both inputs before renormalising, so
    empty bins stay finite.
    """
    p = np.asarray(p, dtype=np.float64) + eps
    q = np.asarray(q, dtype=np.float64) + eps
    p /= p.sum()
    q /= q.sum()
    m = 0.5 * (p + q)
    value = 0.5 * (_kl2(p, m) + _kl2(q, m))
    return float(np.sqrt(max(value, 0.0)))


METRICS = ("ks", "kr", "es", "js")


def distance(metric: str, f, g) -> float:
    """Dispatch on metric name; ``js`` bins both samples first."""
    if metric == "ks":
        return ks_distance(f, g)
    if metric == "kr":
        return kr_distance(f, g)
    if metric == "es":
        return es_distance(f, g)
    if metric == "js":
        return js_distance(bin_scores(f), bin_scores(g))
    raise ValueError(f"unknown metric {metric!r}")

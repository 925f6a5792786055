"""Estimate-quality metrics."""

from __future__ import annotations

import numpy as np

# bucket edges for relative-error histograms (measured / estimated)
RELATIVE_ERROR_BUCKETS = (0.0, 0.25, 0.5, 0.8, 0.9, 1.1, 1.25, 2.0, 4.0, np.inf)


class MetricError(ValueError):
    pass


def _vectors(y_true, y_pred):
    t = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if t.shape != p.shape:
        raise MetricError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise MetricError("metrics need at least one value")
    return t, p


def relative_error(measured: float, estimated: float) -> float:
    """measured / estimated; below one means the estimate was too high."""
    if estimated <= 0:
        raise MetricError("relative error needs a positive estimate")
    return measured / estimated


def mse(y_true, y_pred) -> float:
    t, p = _vectors(y_true, y_pred)
    return float(np.mean((t - p) ** 2))


def smape(y_true, y_pred) -> float:
    """Symmetric mean absolute percentage error in percent, within [0, 200].

    Pairs where both values are zero contribute zero error.
    """
    t, p = _vectors(y_true, y_pred)
    denom = np.abs(t) + np.abs(p)
    terms = np.zeros_like(denom)
    nz = denom > 0
    terms[nz] = 2 * np.abs(t[nz] - p[nz]) / denom[nz]
    return float(100.0 * np.mean(terms))


def relative_error_histogram(measured, estimated, edges=RELATIVE_ERROR_BUCKETS) -> list[tuple[float, float, int]]:
    """(low, high, count) buckets of measured/estimated ratios."""
    m, e = _vectors(measured, estimated)
    if np.any(e <= 0):
        raise MetricError("relative error needs positive estimates")
    counts, _ = np.histogram(m / e, bins=np.asarray(edges, dtype=float))
    return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]

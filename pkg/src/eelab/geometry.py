"""Distances, couplings and measure operations on the circle and the interval.

The state spaces are one-dimensional: the unit-circumference circle [0, 1)
with the wrap metric d(x, y) = min(|x-y|, 1-|x-y|), or a closed interval
with the usual metric.  The universal currency is the EmpiricalMeasure, a
sorted weighted atom list; all Wasserstein / Levy-Prokhorov computations
reduce to exact work on piecewise-constant (or piecewise-linear) CDF
differences.

Conventions fixed here and relied on everywhere else:

* intervals and ring membership are half-open [lo, hi);
* atoms closer than 1e-15 are merged;
* the circle W1 offset is the weighted median of F_mu - F_nu over the
  merged breakpoint grid (the exact minimizer for step CDF differences).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_MERGE_EPS = 1e-15
_LP_TOL = 1e-9


# ---------------------------------------------------------------------------
# domains and points


@dataclass(frozen=True)
class Domain:
    """Circle [0,1) with wrap metric, or an interval [lo, hi]."""

    kind: str  # "circle" | "interval"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("circle", "interval"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "circle" and (self.lo, self.hi) != (0.0, 1.0):
            raise ValueError("circle domain is fixed to [0,1)")
        if self.lo >= self.hi:
            raise ValueError("empty domain")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return 0.5 if self.kind == "circle" else self.length

    def wrap(self, x: float) -> float:
        if self.kind == "circle":
            return float(x) % 1.0
        return min(max(float(x), self.lo), self.hi)

    def distance(self, x: float, y: float) -> float:
        if self.kind == "circle":
            a = abs((float(x) % 1.0) - (float(y) % 1.0))
            return min(a, 1.0 - a)
        return abs(float(x) - float(y))

    def distance_array(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "circle":
            a = np.abs(np.mod(x, 1.0) - np.mod(y, 1.0))
            return np.minimum(a, 1.0 - a)
        return np.abs(x - y)


CIRCLE = Domain("circle")
UNIT_INTERVAL = Domain("interval", 0.0, 1.0)


def interval_domain(lo: float, hi: float) -> Domain:
    return Domain("interval", float(lo), float(hi))


class CirclePoint(float):
    """A point on the unit circle; construction reduces mod 1."""

    def __new__(cls, position: float):
        return super().__new__(cls, float(position) % 1.0)

    @property
    def position(self) -> float:
        return float(self)


def circle_distance(x: float, y: float) -> float:
    """Wrap metric min(|x-y|, 1-|x-y|); symmetric, in [0, 1/2]."""
    a = abs((float(x) % 1.0) - (float(y) % 1.0))
    return min(a, 1.0 - a)


# ---------------------------------------------------------------------------
# interval unions


@dataclass(frozen=True)
class IntervalUnion:
    """Disjoint sorted half-open intervals [lo, hi)."""

    intervals: tuple[tuple[float, float], ...]

    @staticmethod
    def of(pieces: Iterable[tuple[float, float]]) -> "IntervalUnion":
        """Normalize: drop empties, sort, merge overlapping/touching pieces."""
        ps = sorted((float(a), float(b)) for a, b in pieces if b > a)
        merged: list[list[float]] = []
        for a, b in ps:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return IntervalUnion(tuple((a, b) for a, b in merged))

    @property
    def length(self) -> float:
        return sum(b - a for a, b in self.intervals)

    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, x: float) -> bool:
        return any(a <= x < b for a, b in self.intervals)

    def contains_array(self, xs: np.ndarray) -> np.ndarray:
        out = np.zeros(len(xs), dtype=bool)
        for a, b in self.intervals:
            out |= (xs >= a) & (xs < b)
        return out

    def complement(self, domain: Domain) -> "IntervalUnion":
        pieces = []
        cursor = domain.lo
        for a, b in self.intervals:
            if a > cursor:
                pieces.append((cursor, a))
            cursor = max(cursor, b)
        if cursor < domain.hi:
            pieces.append((cursor, domain.hi))
        return IntervalUnion.of(pieces)

    def dilate(self, delta: float, domain: Domain) -> "IntervalUnion":
        """The delta-thickening: points within distance delta of the set."""
        if delta < 0:
            raise ValueError("delta must be >= 0")
        if self.is_empty():
            return self
        if domain.kind == "interval":
            pieces = [
                (max(a - delta, domain.lo), min(b + delta, domain.hi))
                for a, b in self.intervals
            ]
            return IntervalUnion.of(pieces)
        # circle: widen then wrap back into [0,1)
        pieces = []
        for a, b in self.intervals:
            a, b = a - delta, b + delta
            if b - a >= 1.0:
                return IntervalUnion.of([(0.0, 1.0)])
            a_m = a % 1.0
            b_m = a_m + (b - a)
            if b_m <= 1.0:
                pieces.append((a_m, b_m))
            else:
                pieces.append((a_m, 1.0))
                pieces.append((0.0, b_m - 1.0))
        return IntervalUnion.of(pieces)

    def erode(self, delta: float, domain: Domain) -> "IntervalUnion":
        """B_{-delta} = complement of the delta-thickening of the complement."""
        return self.complement(domain).dilate(delta, domain).complement(domain)


# ---------------------------------------------------------------------------
# empirical measures


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted sorted atom list on a tagged domain.

    Weights are strictly positive and sum to 1 (validated to 1e-12); atoms
    closer than 1e-15 are merged at construction.
    """

    points: np.ndarray
    weights: np.ndarray
    domain: Domain

    @staticmethod
    def from_points(
        points: Sequence[float],
        domain: Domain = CIRCLE,
        weights: Sequence[float] | None = None,
    ) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or len(pts) == 0:
            raise ValueError("need a nonempty 1-d point list")
        if domain.kind == "circle":
            pts = np.mod(pts, 1.0)
        if weights is None:
            w = np.full(len(pts), 1.0 / len(pts))
        else:
            w = np.asarray(weights, dtype=float)
            if len(w) != len(pts):
                raise ValueError("points/weights length mismatch")
            if np.any(w <= 0):
                raise ValueError("weights must be strictly positive")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1 within 1e-12")
        order = np.argsort(pts, kind="stable")
        pts, w = pts[order], w[order]
        # merge near-duplicates
        keep_pts: list[float] = []
        keep_w: list[float] = []
        for p, wt in zip(pts, w):
            if keep_pts and p - keep_pts[-1] <= _MERGE_EPS:
                keep_w[-1] += wt
            else:
                keep_pts.append(float(p))
                keep_w.append(float(wt))
        return EmpiricalMeasure(np.array(keep_pts), np.array(keep_w), domain)

    def __len__(self) -> int:
        return len(self.points)

    def cdf(self, x: float) -> float:
        """P([lo, x]), right-continuous."""
        i = np.searchsorted(self.points, x, side="right")
        return float(self.weights[:i].sum())

    def cdf_strict(self, x: float) -> float:
        """P([lo, x))."""
        i = np.searchsorted(self.points, x, side="left")
        return float(self.weights[:i].sum())

    def cdf_array(self, xs: np.ndarray) -> np.ndarray:
        cw = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cw[np.searchsorted(self.points, xs, side="right")]

    def cdf_strict_array(self, xs: np.ndarray) -> np.ndarray:
        cw = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cw[np.searchsorted(self.points, xs, side="left")]

    def mass(self, region: IntervalUnion) -> float:
        total = 0.0
        for a, b in region.intervals:
            i = np.searchsorted(self.points, a, side="left")
            j = np.searchsorted(self.points, b, side="left")
            total += float(self.weights[i:j].sum())
        return total

    def same_domain(self, other: "EmpiricalMeasure") -> bool:
        return self.domain == other.domain


def _require_same_domain(mu: EmpiricalMeasure, nu: EmpiricalMeasure, kind: str):
    if not mu.same_domain(nu):
        raise ValueError("domain tag mismatch")
    if mu.domain.kind != kind:
        raise ValueError(f"expected {kind} measures")


# ---------------------------------------------------------------------------
# CDF-difference cores


def _step_cdf_diff(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    """Merged breakpoints xs and the step values of F_mu - F_nu.

    Returns (xs, g) where g[k] is the constant value of F_mu - F_nu on
    [xs[k], xs[k+1]); xs covers all atoms of either measure.
    """
    xs = np.union1d(mu.points, nu.points)
    cm = np.cumsum(mu.weights)
    cn = np.cumsum(nu.weights)
    im = np.searchsorted(mu.points, xs, side="right")
    inn = np.searchsorted(nu.points, xs, side="right")
    fm = np.where(im > 0, cm[np.maximum(im - 1, 0)], 0.0)
    fn = np.where(inn > 0, cn[np.maximum(inn - 1, 0)], 0.0)
    return xs, fm - fn


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    half = 0.5 * cw[-1]
    k = int(np.searchsorted(cw, half))
    return float(v[min(k, len(v) - 1)])


def w1_interval(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 on an interval: integral of |F_mu - F_nu|."""
    _require_same_domain(mu, nu, "interval")
    xs, g = _step_cdf_diff(mu, nu)
    if len(xs) < 2:
        return 0.0
    seg = np.diff(xs)
    return float(np.sum(seg * np.abs(g[:-1])))


def w1_circle(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W1 under the wrap metric.

    min over the offset alpha of the integral of |F_mu - F_nu - alpha| over
    one period; alpha is the weighted median of the step values with segment
    lengths as weights (the wrap-around segment included).
    """
    _require_same_domain(mu, nu, "circle")
    xs, g = _step_cdf_diff(mu, nu)
    if len(xs) == 1:
        return 0.0
    seg = np.empty(len(xs))
    seg[:-1] = np.diff(xs)
    seg[-1] = xs[0] + 1.0 - xs[-1]  # wrap segment, carries g[-1] (== 0)
    alpha = _weighted_median(g, seg)
    return float(np.sum(seg * np.abs(g - alpha)))


def w1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    if mu.domain.kind == "circle":
        return w1_circle(mu, nu)
    return w1_interval(mu, nu)


# --- general piecewise-linear CDF differences (densities vs atom lists) ----


def _abs_linear_integral(a: float, b: float, va: float, vb: float) -> float:
    """Exact integral of |linear interpolant| on [a, b]."""
    if b <= a:
        return 0.0
    if va == 0.0 and vb == 0.0:
        return 0.0
    if va * vb >= 0.0:
        return 0.5 * abs(va + vb) * (b - a)
    # sign change: split at the root
    t = va / (va - vb)
    root = a + t * (b - a)
    return 0.5 * (abs(va) * (root - a) + abs(vb) * (b - root))


def _abs_linear_integral_vec(
    seg: np.ndarray, va: np.ndarray, vb: np.ndarray
) -> float:
    """Sum of exact integrals of |linear interpolant| per segment."""
    same = va * vb >= 0.0
    trap = 0.5 * np.abs(va + vb) * seg
    denom = np.where(same, 1.0, va - vb)
    t = np.where(same, 0.0, va / denom)
    split = 0.5 * (np.abs(va) * t + np.abs(vb) * (1.0 - t)) * seg
    return float(np.sum(np.where(same, trap, split)))


def piecewise_linear_w1(xs: np.ndarray, vals: np.ndarray, circle: bool) -> float:
    """W1 from a sampled piecewise-linear CDF difference.

    xs are breakpoints (ascending, spanning the domain), vals[k] = g(xs[k])
    where g = F_mu - F_nu is continuous piecewise linear between breakpoints
    (callers must include every kink of g as a breakpoint; a jump is encoded
    by repeating the breakpoint with its left and right values).  For the
    circle the minimizing offset is located by bisection on the Lebesgue
    quantile function of g.
    """
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    seg = np.diff(xs)
    keep = seg > 0
    seg = seg[keep]
    va = vals[:-1][keep]
    vb = vals[1:][keep]
    if not circle:
        return _abs_linear_integral_vec(seg, va, vb)

    lo_v = np.minimum(va, vb)
    hi_v = np.maximum(va, vb)
    spread = np.maximum(hi_v - lo_v, 1e-300)
    length = float(seg.sum())

    def measure_leq(alpha: float) -> float:
        frac = np.clip((alpha - lo_v) / spread, 0.0, 1.0)
        frac = np.where(alpha >= hi_v, 1.0, frac)
        return float(np.sum(seg * frac))

    lo_a, hi_a = float(vals.min()), float(vals.max())
    for _ in range(80):
        mid = 0.5 * (lo_a + hi_a)
        if measure_leq(mid) < 0.5 * length:
            lo_a = mid
        else:
            hi_a = mid
    alpha = 0.5 * (lo_a + hi_a)
    return _abs_linear_integral_vec(seg, va - alpha, vb - alpha)


# ---------------------------------------------------------------------------
# Levy-Prokhorov


def _lp_ok(mu: EmpiricalMeasure, nu: EmpiricalMeasure, eps: float) -> bool:
    """Check mu([0,x-eps])-eps <= nu([0,x]) <= mu([0,x+eps])+eps for all x.

    The sup is attained at CDF breakpoints shifted by +-eps; both one-sided
    conditions are checked at their candidate maximizers.
    """
    # condition A: sup_x mu.cdf(x - eps) - nu.cdf(x) <= eps
    for a in mu.points:
        if mu.cdf(a) - nu.cdf(a + eps) > eps:
            return False
    for b in nu.points:
        if mu.cdf_strict(b - eps) - nu.cdf_strict(b) > eps:
            return False
    # condition B: sup_x nu.cdf(x) - mu.cdf(x + eps) <= eps
    for b in nu.points:
        if nu.cdf(b) - mu.cdf(b + eps) > eps:
            return False
    for a in mu.points:
        if nu.cdf_strict(a - eps) - mu.cdf_strict(a) > eps:
            return False
    return True


def levy_prokhorov(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Levy-Prokhorov distance via bisection (absolute tolerance 1e-9)."""
    if not mu.same_domain(nu):
        raise ValueError("domain tag mismatch")
    lo, hi = 0.0, 1.0 + mu.domain.length
    if _lp_ok(mu, nu, lo):
        return 0.0
    while hi - lo > _LP_TOL:
        mid = 0.5 * (lo + hi)
        if _lp_ok(mu, nu, mid):
            hi = mid
        else:
            lo = mid
    return hi


def modified_lp(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, g: IntervalUnion
) -> float:
    """max(d_LP, |mu(G) - nu(G)|): the mode-occupancy-aware comparison."""
    return max(levy_prokhorov(mu, nu), abs(mu.mass(g) - nu.mass(g)))


# ---------------------------------------------------------------------------
# quantile coupling


def quantile_couple(
    source_cdf: Callable[[float], float], target: EmpiricalMeasure, y: float
) -> float:
    """Monotone CDF-matching: the smallest target atom x with F_target(x) > F_source(y)."""
    u = float(source_cdf(y))
    if not (0.0 <= u <= 1.0) or np.isnan(u):
        raise ValueError("y outside the source support")
    cw = np.cumsum(target.weights)
    k = int(np.searchsorted(cw, u, side="right"))
    k = min(k, len(target) - 1)
    return float(target.points[k])

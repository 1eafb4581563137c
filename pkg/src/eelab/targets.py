"""Target potentials, tempered density families and energy rings.

Potentials live on the unit circle (the interval case uses the flat
potential only).  Densities pi_i(x) proportional to exp(-beta_i * max(H_i, V(x)))
are stored as exact piecewise-constant densities for the flat and
square-tooth potentials; the saw-tooth potential is piecewise linear, so its
exponential is approximated by a piecewise-constant density on 2^14 uniform
cells (relative cell error <= C * 2^-15 * beta, far below the tolerances
used downstream).  Exact storage is what makes inverse-CDF sampling of the
limiting sampler and the ring-mass factors of the acceptance ratio exact.

Ring conventions: rings are half-open [h1, h2) so ladder cut values belong
to the ring above.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (
    CIRCLE,
    Domain,
    EmpiricalMeasure,
    IntervalUnion,
    piecewise_linear_w1,
)

SAWTOOTH_CELLS = 1 << 14


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Flat:
    """V identically 0."""

    def value(self, x: float) -> float:
        return 0.0

    def value_array(self, xs: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.asarray(xs, dtype=float))

    def segments(self) -> list[tuple[float, float, float, float]]:
        return [(0.0, 1.0, 0.0, 0.0)]

    @property
    def min_value(self) -> float:
        return 0.0


@dataclass(frozen=True)
class SquareTooth:
    """M-well square-tooth potential: V = 0 on the first half of each period
    of length 1/M, V = H on the second half."""

    M: int
    H: float

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("need M >= 2 wells")
        if self.H < 0:
            raise ValueError("depth H must be >= 0")

    def value(self, x: float) -> float:
        frac = (float(x) % 1.0) * self.M % 1.0
        return 0.0 if frac < 0.5 else self.H

    def value_array(self, xs: np.ndarray) -> np.ndarray:
        frac = np.mod(np.mod(xs, 1.0) * self.M, 1.0)
        return np.where(frac < 0.5, 0.0, self.H)

    def segments(self) -> list[tuple[float, float, float, float]]:
        segs = []
        for k in range(self.M):
            a = k / self.M
            mid = (k + 0.5) / self.M
            b = (k + 1) / self.M
            segs.append((a, mid, 0.0, 0.0))
            segs.append((mid, b, self.H, self.H))
        return segs

    @property
    def min_value(self) -> float:
        return 0.0


@dataclass(frozen=True)
class SawTooth:
    """Piecewise-linear tooth of slope C, peak C/4 at x=1/4, period 1/2."""

    C: float

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("slope C must be > 0")

    def value(self, x: float) -> float:
        y = (float(x) % 1.0) % 0.5
        if y < 0.25:
            return self.C * y
        return self.C / 4.0 - self.C * (y - 0.25)

    def value_array(self, xs: np.ndarray) -> np.ndarray:
        y = np.mod(np.mod(xs, 1.0), 0.5)
        up = self.C * y
        down = self.C / 4.0 - self.C * (y - 0.25)
        return np.where(y < 0.25, up, down)

    def segments(self) -> list[tuple[float, float, float, float]]:
        peak = self.C / 4.0
        segs = []
        for k in range(2):
            a = k * 0.5
            segs.append((a, a + 0.25, 0.0, peak))
            segs.append((a + 0.25, a + 0.5, peak, 0.0))
        return segs

    @property
    def min_value(self) -> float:
        return 0.0


Potential = Flat | SquareTooth | SawTooth


def potential_value(pot: Potential, x: float) -> float:
    return pot.value(x)


# ---------------------------------------------------------------------------
# piecewise-constant densities (with optional atoms, for kernel laws)


@dataclass(frozen=True)
class PiecewiseConstDensity:
    """Unnormalized piecewise-constant density plus optional point masses.

    edges: ascending breakpoints spanning the domain; heights[k] is the
    unnormalized density on [edges[k], edges[k+1]).  atoms are (position,
    unnormalized mass) pairs; they let one-step kernel laws carry their
    Metropolis hold mass.  All public accessors are normalized.
    """

    edges: np.ndarray
    heights: np.ndarray
    domain: Domain = CIRCLE
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        h = np.asarray(self.heights, dtype=float)
        if len(e) != len(h) + 1 or len(h) == 0:
            raise ValueError("need len(edges) == len(heights)+1")
        if np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing")
        if np.any(h < 0) or any(m < 0 for _, m in self.atoms):
            raise ValueError("negative density")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "heights", h)
        cell = h * np.diff(e)
        z = float(cell.sum()) + sum(m for _, m in self.atoms)
        if z <= 0:
            raise ValueError("zero total mass")
        object.__setattr__(self, "_z", z)
        object.__setattr__(self, "_cell_mass", cell / z)

    @property
    def normalization(self) -> float:
        return self._z

    @property
    def atom_mass(self) -> float:
        return sum(m for _, m in self.atoms) / self._z

    def pdf(self, x: float) -> float:
        """Normalized density of the continuous part at x."""
        i = int(np.searchsorted(self.edges, x, side="right")) - 1
        if i < 0 or i >= len(self.heights):
            return 0.0
        return float(self.heights[i]) / self._z

    def pdf_fast(self, x: float) -> float:
        """pdf via bisect on cached python lists (hot-loop friendly)."""
        if not hasattr(self, "_fast"):
            object.__setattr__(
                self,
                "_fast",
                (list(map(float, self.edges)), list(map(float, self.heights / self._z))),
            )
        edges, heights = self._fast
        i = bisect_right(edges, x) - 1
        if i < 0 or i >= len(heights):
            return 0.0
        return heights[i]

    def pdf_array(self, xs: np.ndarray) -> np.ndarray:
        i = np.searchsorted(self.edges, xs, side="right") - 1
        i = np.clip(i, 0, len(self.heights) - 1)
        out = self.heights[i] / self._z
        out = np.where((xs < self.edges[0]) | (xs >= self.edges[-1]), 0.0, out)
        return out

    def cdf(self, t: float) -> float:
        """P([lo, t]), right-continuous, normalized."""
        e = self.edges
        i = int(np.searchsorted(e, t, side="right")) - 1
        if i < 0:
            cont = 0.0
        elif i >= len(self.heights):
            cont = float(self._cell_mass.sum())
        else:
            cont = float(self._cell_mass[:i].sum()) + (t - e[i]) * self.heights[i] / self._z
        return cont + sum(m for p, m in self.atoms if p <= t) / self._z

    def cdf_strict(self, t: float) -> float:
        return self.cdf(t) - sum(m for p, m in self.atoms if p == t) / self._z

    def cdf_array(self, ts: np.ndarray) -> np.ndarray:
        e, h = self.edges, self.heights
        cm = np.concatenate([[0.0], np.cumsum(self._cell_mass)])
        i = np.searchsorted(e, ts, side="right") - 1
        ic = np.clip(i, 0, len(h) - 1)
        cont = cm[ic] + (ts - e[ic]) * h[ic] / self._z
        cont = np.where(i < 0, 0.0, np.where(i >= len(h), cm[-1], cont))
        for p, m in self.atoms:
            cont = cont + np.where(ts >= p, m / self._z, 0.0)
        return cont

    def cdf_strict_array(self, ts: np.ndarray) -> np.ndarray:
        out = self.cdf_array(ts)
        for p, m in self.atoms:
            out = out - np.where(ts == p, m / self._z, 0.0)
        return out

    def mass(self, region: IntervalUnion) -> float:
        total = 0.0
        for a, b in region.intervals:
            total += self.cdf_strict(b) - self.cdf_strict(a)
        return total

    def restrict(self, region: IntervalUnion) -> "PiecewiseConstDensity":
        """Condition on the region (continuous part; atoms filtered by membership)."""
        new_edges: list[float] = []
        new_heights: list[float] = []
        for a, b in region.intervals:
            i0 = max(int(np.searchsorted(self.edges, a, side="right")) - 1, 0)
            i1 = min(
                int(np.searchsorted(self.edges, b, side="left")), len(self.heights)
            )
            for k in range(i0, i1):
                lo = max(float(self.edges[k]), a)
                hi = min(float(self.edges[k + 1]), b)
                if hi > lo and self.heights[k] > 0:
                    new_edges.append(lo)
                    new_edges.append(hi)
                    new_heights.append(float(self.heights[k]))
        new_atoms = tuple(
            (p, m) for p, m in self.atoms if region.contains(p) and m > 0
        )
        if not new_heights and not new_atoms:
            raise ValueError("zero-mass restriction")
        if not new_heights:
            # atom-only restriction: keep a zero-height cell for the edges
            return PiecewiseConstDensity(
                np.array([self.domain.lo, self.domain.hi]),
                np.array([0.0]),
                self.domain,
                new_atoms,
            )
        # merge back into a proper edge array (cells may be disjoint: insert
        # zero-height gap cells)
        edges = [new_edges[0]]
        heights = []
        for k in range(len(new_heights)):
            lo, hi = new_edges[2 * k], new_edges[2 * k + 1]
            if lo > edges[-1]:
                heights.append(0.0)
                edges.append(lo)
            if lo < edges[-1]:
                raise AssertionError("restriction pieces out of order")
            heights.append(new_heights[k])
            edges.append(hi)
        return PiecewiseConstDensity(
            np.array(edges), np.array(heights), self.domain, new_atoms
        )

    # -- sampling -----------------------------------------------------------

    def _sampling_tables(self):
        """Cumulative masses over interleaved cells and atoms, cached."""
        if not hasattr(self, "_samp"):
            items: list[tuple[float, float, float]] = []  # (lo, hi, mass)
            for k in range(len(self.heights)):
                m = float(self._cell_mass[k])
                if m > 0:
                    items.append((float(self.edges[k]), float(self.edges[k + 1]), m))
            for p, m in self.atoms:
                if m > 0:
                    items.append((p, p, m / self._z))
            items.sort()
            cum = np.cumsum([m for _, _, m in items])
            cum = cum / cum[-1]
            los = np.array([a for a, _, _ in items])
            his = np.array([b for _, b, _ in items])
            starts = np.concatenate([[0.0], cum[:-1]])
            object.__setattr__(self, "_samp", (cum, starts, los, his))
        return self._samp

    def sample(self, u: float) -> float:
        return float(self.sample_array(np.array([u]))[0])

    def sample_array(self, us: np.ndarray) -> np.ndarray:
        """Exact inverse-CDF samples; deterministic in us."""
        cum, starts, los, his = self._sampling_tables()
        idx = np.searchsorted(cum, us, side="right")
        idx = np.clip(idx, 0, len(cum) - 1)
        span = cum[idx] - starts[idx]
        frac = np.where(span > 0, (us - starts[idx]) / np.maximum(span, 1e-300), 0.0)
        frac = np.clip(frac, 0.0, 1.0 - 1e-16)
        return los[idx] + frac * (his[idx] - los[idx])

    # -- exact integrals ----------------------------------------------------

    def eccentricity(self, x: float) -> float:
        """Exact integral of d(x, y) against the normalized density."""
        kinks = [x] if self.domain.kind == "interval" else [x % 1.0, (x + 0.5) % 1.0]
        cut = np.union1d(self.edges, [k for k in kinks if self.edges[0] < k < self.edges[-1]])
        total = 0.0
        for a, b in zip(cut[:-1], cut[1:]):
            mid_h = self.pdf(0.5 * (a + b))
            da = self.domain.distance(x, a)
            db = self.domain.distance(x, b)
            # d(x, .) is linear on each piece between kinks
            total += mid_h * 0.5 * (da + db) * (b - a)
        for p, m in self.atoms:
            total += (m / self._z) * self.domain.distance(x, p)
        return total


def flat_density(domain: Domain = CIRCLE) -> PiecewiseConstDensity:
    return PiecewiseConstDensity(
        np.array([domain.lo, domain.hi]), np.array([1.0]), domain
    )


# ---------------------------------------------------------------------------
# tempered families


@dataclass(frozen=True)
class TemperedFamily:
    """The ladder pi_i proportional to exp(-beta_i * max(H_i, V))."""

    potential: Potential
    levels: tuple[tuple[float, float], ...]  # (beta_i, H_i), i = 0..K
    domain: Domain = CIRCLE

    def __post_init__(self):
        lv = tuple((float(b), float(h)) for b, h in self.levels)
        object.__setattr__(self, "levels", lv)
        if not lv:
            raise ValueError("need at least one level")
        betas = [b for b, _ in lv]
        hs = [h for _, h in lv]
        if betas[0] != 1.0:
            raise ValueError("beta_0 must equal 1")
        if any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("betas must be strictly decreasing")
        if any(b < 0 for b in betas):
            raise ValueError("betas must be >= 0")
        if any(h2 < h1 for h1, h2 in zip(hs, hs[1:])):
            raise ValueError("H_i must be nondecreasing")
        object.__setattr__(self, "_dens_cache", {})

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def log_unnorm(self, i: int, x: float) -> float:
        beta, h = self._level(i)
        return -beta * max(h, self.potential.value(x))

    def unnorm(self, i: int, x: float) -> float:
        return math.exp(self.log_unnorm(i, x))

    def _level(self, i: int) -> tuple[float, float]:
        if not (0 <= i < len(self.levels)):
            raise IndexError(f"level {i} out of range")
        return self.levels[i]

    def density(self, i: int) -> PiecewiseConstDensity:
        """Exact stored density of level i (cached)."""
        if i not in self._dens_cache:
            self._dens_cache[i] = self._build_density(i)
        return self._dens_cache[i]

    def _build_density(self, i: int) -> PiecewiseConstDensity:
        beta, h = self._level(i)
        pot = self.potential
        if isinstance(pot, SawTooth) and beta > 0:
            edges = np.linspace(self.domain.lo, self.domain.hi, SAWTOOTH_CELLS + 1)
            mids = 0.5 * (edges[:-1] + edges[1:])
            heights = np.exp(-beta * np.maximum(h, pot.value_array(mids)))
            return PiecewiseConstDensity(edges, heights, self.domain)
        if isinstance(pot, SquareTooth) and beta > 0:
            m = pot.M
            edges = np.linspace(0.0, 1.0, 2 * m + 1)
            vals = np.array([0.0 if k % 2 == 0 else pot.H for k in range(2 * m)])
            heights = np.exp(-beta * np.maximum(h, vals))
            return PiecewiseConstDensity(edges, heights, self.domain)
        # flat potential, or beta == 0: constant density
        return flat_density(self.domain)


def tempered_density(
    fam: TemperedFamily, i: int, x: float, normalized: bool = True
) -> float:
    """exp(-beta_i max(H_i, V(x))), exactly normalized on request."""
    val = fam.unnorm(i, x)
    if not normalized:
        return val
    return val / fam.density(i).normalization


# ---------------------------------------------------------------------------
# energy rings


@dataclass(frozen=True)
class Ladder:
    cuts: tuple[float, ...]  # H_0 < H_1 < ... (top ring extends to +inf)

    def __post_init__(self):
        c = tuple(float(v) for v in self.cuts)
        if len(c) < 1 or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("ladder cuts must be strictly increasing")
        object.__setattr__(self, "cuts", c)


@dataclass(frozen=True)
class Band:
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("band half-width must be > 0")


@dataclass(frozen=True)
class Full:
    pass


EnergyRingSpec = Ladder | Band | Full


def ring_interval(spec: EnergyRingSpec, v: float) -> tuple[float, float]:
    """The energy ring [h1, h2) containing potential value v."""
    if isinstance(spec, Ladder):
        if v < spec.cuts[0]:
            raise ValueError(f"potential value {v} below the ladder bottom")
        i = int(np.searchsorted(np.asarray(spec.cuts), v, side="right")) - 1
        h1 = spec.cuts[i]
        h2 = spec.cuts[i + 1] if i + 1 < len(spec.cuts) else math.inf
        return (h1, h2)
    if isinstance(spec, Band):
        return (v - spec.eps, v + spec.eps)
    return (-math.inf, math.inf)


def ring_index(spec: EnergyRingSpec, v: float) -> int:
    """Bucket id of the ring containing v (Ladder: cut index; else 0)."""
    if isinstance(spec, Ladder):
        if v < spec.cuts[0]:
            raise ValueError(f"potential value {v} below the ladder bottom")
        return int(np.searchsorted(np.asarray(spec.cuts), v, side="right")) - 1
    return 0


def ring_preimage(
    pot: Potential, ring: tuple[float, float], domain: Domain = CIRCLE
) -> IntervalUnion:
    """{x : h1 <= V(x) < h2} as an interval union."""
    h1, h2 = ring
    pieces: list[tuple[float, float]] = []
    for a, b, va, vb in pot.segments():
        if va == vb:
            if h1 <= va < h2:
                pieces.append((a, b))
            continue
        slope = (vb - va) / (b - a)
        # x range with V in [h1, h2)
        t1 = (h1 - va) / slope
        t2 = (h2 - va) / slope
        lo_t, hi_t = min(t1, t2), max(t1, t2)
        lo = max(a, a + lo_t)
        hi = min(b, a + hi_t)
        if hi > lo:
            pieces.append((lo, hi))
    return IntervalUnion.of(pieces)


def sample_restricted(
    dens: PiecewiseConstDensity, region: IntervalUnion, u: float
) -> float:
    """Exact inverse-CDF sample from dens conditioned on the region."""
    return dens.restrict(region).sample(u)


# ---------------------------------------------------------------------------
# the equi-energy acceptance ratio


def ee_acceptance(
    fam: TemperedFamily,
    i: int,
    x: float,
    q: float,
    spec: EnergyRingSpec,
) -> float:
    """min(1, [pi_i(q)/pi_i(x)] [pi_{i+1}(x)/pi_{i+1}(q)] [ring-mass ratio]).

    For Ladder rings the preimages of the rings of x and q coincide whenever
    q was proposed from x's ring, so the mass factor is exactly 1 and is
    skipped.  For Band (and Full) specs the factor uses exact integration of
    the stored level-(i+1) density over the two ring preimages.
    """
    if i + 1 >= fam.n_levels:
        raise IndexError("ee_acceptance needs level i+1")
    log_r = (
        fam.log_unnorm(i, q)
        - fam.log_unnorm(i, x)
        + fam.log_unnorm(i + 1, x)
        - fam.log_unnorm(i + 1, q)
    )
    if fam.unnorm(i, x) == 0.0:
        raise ValueError("zero density at the current point")
    if not isinstance(spec, Ladder):
        pot = fam.potential
        ring_x = ring_preimage(pot, ring_interval(spec, pot.value(x)), fam.domain)
        ring_q = ring_preimage(pot, ring_interval(spec, pot.value(q)), fam.domain)
        dens = fam.density(i + 1)
        mx = dens.mass(ring_x)
        mq = dens.mass(ring_q)
        if mx <= 0 or mq <= 0:
            raise ValueError("zero-mass ring preimage")
        log_r += math.log(mq) - math.log(mx)
    return min(1.0, math.exp(log_r))


# ---------------------------------------------------------------------------
# transport distances involving stored densities


def _doubled_diff_w1(
    xs: np.ndarray,
    left_a: np.ndarray,
    right_a: np.ndarray,
    left_b: np.ndarray,
    right_b: np.ndarray,
    circle: bool,
) -> float:
    """W1 from CDF values sampled on both sides of each breakpoint.

    Jumps are encoded by repeating every breakpoint: segment [x_k, x_k] with
    the (left, right) pair carries the jump, zero-length segments are
    ignored by the integrator.
    """
    pts = np.repeat(xs, 2)
    vals = np.empty(2 * len(xs))
    vals[0::2] = left_a - left_b
    vals[1::2] = right_a - right_b
    return piecewise_linear_w1(pts, vals, circle=circle)


def w1_density_measure(dens: PiecewiseConstDensity, mu: EmpiricalMeasure) -> float:
    """Exact W1 between a stored density and an empirical measure."""
    if dens.domain != mu.domain:
        raise ValueError("domain tag mismatch")
    xs = np.union1d(
        np.union1d(dens.edges, mu.points), np.array([p for p, _ in dens.atoms])
    )
    xs = np.union1d(xs, np.array([dens.domain.lo, dens.domain.hi]))
    return _doubled_diff_w1(
        xs,
        mu.cdf_strict_array(xs),
        mu.cdf_array(xs),
        dens.cdf_strict_array(xs),
        dens.cdf_array(xs),
        circle=dens.domain.kind == "circle",
    )


def w1_densities(a: PiecewiseConstDensity, b: PiecewiseConstDensity) -> float:
    """Exact W1 between two stored densities (atoms included)."""
    if a.domain != b.domain:
        raise ValueError("domain tag mismatch")
    xs = np.union1d(a.edges, b.edges)
    ap = np.array([p for p, _ in a.atoms] + [p for p, _ in b.atoms])
    if len(ap):
        xs = np.union1d(xs, ap)
    xs = np.union1d(xs, np.array([a.domain.lo, a.domain.hi]))
    return _doubled_diff_w1(
        xs,
        a.cdf_strict_array(xs),
        a.cdf_array(xs),
        b.cdf_strict_array(xs),
        b.cdf_array(xs),
        circle=a.domain.kind == "circle",
    )

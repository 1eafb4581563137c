"""Curvature-geometry estimators, spectral analysis of discretized chains,
and evaluators for the closed-form concentration and autocovariance bounds.

A KernelHandle wraps a one-step transition so that every estimator here can
either sample it (Monte Carlo with bootstrap standard errors) or, when the
handle carries an exact one-step law, compute the quantity in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    CIRCLE,
    Domain,
    EmpiricalMeasure,
    IntervalUnion,
    w1,
)
from .rng import RngStream
from .targets import (
    EnergyRingSpec,
    Full,
    PiecewiseConstDensity,
    TemperedFamily,
    ee_acceptance,
    flat_density,
    ring_interval,
    ring_preimage,
    w1_densities,
)

_GAUSS2 = (-1.0 / math.sqrt(3.0), 1.0 / math.sqrt(3.0))


# ---------------------------------------------------------------------------
# kernel handles


@dataclass(frozen=True)
class KernelHandle:
    """A samplable one-step transition, optionally with its exact law.

    core consumes one (u1, u2, u3) uniform triple per step so that handles
    built from the sampler step functions replay them exactly; density_fn,
    when present, returns the exact one-step distribution K(x, .) including
    any hold atom at x.
    """

    core: Callable[[float, float, float, float], float]
    domain: Domain = CIRCLE
    density_fn: Callable[[float], PiecewiseConstDensity] | None = None

    def step(self, x: float, rng: RngStream, t: int = 0) -> float:
        u1, u2, u3 = rng.triple(t)
        return self.core(x, u1, u2, u3)

    def sample_many(
        self, x: float, n: int, seed: int, replica: int = 0, level: int = 0
    ) -> np.ndarray:
        """n independent one-step draws from K(x, .), deterministic in seed."""
        stream = RngStream(seed, replica, level)
        us = stream.block(0, n)
        if self.density_fn is not None:
            return _sample_density(self.density_fn(x), us[:, 1])
        return np.array([self.core(x, u[0], u[1], u[2]) for u in us])


def _sample_density(dens: PiecewiseConstDensity, us: np.ndarray) -> np.ndarray:
    return dens.sample_array(us)


def identity_kernel(domain: Domain = CIRCLE) -> KernelHandle:
    def dens(x: float) -> PiecewiseConstDensity:
        return PiecewiseConstDensity(
            np.array([domain.lo, domain.hi]), np.array([0.0]), domain,
            atoms=((x, 1.0),),
        )

    return KernelHandle(lambda x, u1, u2, u3: x, domain, dens)


def constant_kernel(dens: PiecewiseConstDensity) -> KernelHandle:
    return KernelHandle(
        lambda x, u1, u2, u3: dens.sample(u2), dens.domain, lambda x: dens
    )


def uniform_ball_density(x: float, c: float) -> PiecewiseConstDensity:
    """Uniform law on the arc of radius c around x (circle only)."""
    if not (0.0 < c < 0.5):
        raise ValueError("need 0 < c < 1/2")
    x = x % 1.0
    lo = (x - c) % 1.0
    hi = (x + c) % 1.0
    if lo < hi:
        return PiecewiseConstDensity(np.array([lo, hi]), np.array([1.0]))
    edges, heights = [0.0], []
    if hi > 0.0:
        edges.append(hi)
        heights.append(1.0)
    heights.append(0.0)
    edges.append(lo)
    heights.append(1.0)
    edges.append(1.0)
    return PiecewiseConstDensity(np.array(edges), np.array(heights))


def ball_kernel(c: float) -> KernelHandle:
    """K(x, .) = Unif(ball_c(x)) on the circle."""
    return KernelHandle(
        lambda x, u1, u2, u3: (x + c * (2.0 * u2 - 1.0)) % 1.0,
        CIRCLE,
        lambda x: uniform_ball_density(x, c),
    )


def lazy_uniform_kernel(p: float, c: float) -> KernelHandle:
    """K(x, .) = (1-p) Unif(ball_c(x)) + p Unif(circle)."""
    if not (0.0 <= p <= 1.0):
        raise ValueError("need 0 <= p <= 1")

    def core(x, u1, u2, u3):
        if u1 < p:
            return u2
        return (x + c * (2.0 * u2 - 1.0)) % 1.0

    def dens(x):
        return mix_densities(
            [(1.0 - p, uniform_ball_density(x, c)), (p, flat_density(CIRCLE))],
            CIRCLE,
        )

    return KernelHandle(core, CIRCLE, dens)


def shift_kernel(kernel: KernelHandle, delta: float) -> KernelHandle:
    """The kernel followed by a deterministic translation (circle only)."""
    if kernel.domain.kind != "circle":
        raise ValueError("shift perturbation is defined on the circle")

    def core(x, u1, u2, u3):
        return (kernel.core(x, u1, u2, u3) + delta) % 1.0

    dens_fn = None
    if kernel.density_fn is not None:

        def dens_fn(x):
            return _translate_density(kernel.density_fn(x), delta)

    return KernelHandle(core, kernel.domain, dens_fn)


def _translate_density(d: PiecewiseConstDensity, delta: float) -> PiecewiseConstDensity:
    """Push a circle density forward by y -> y + delta (mod 1)."""
    edges = np.concatenate([[0.0], d.edges, [1.0]])
    heights = np.concatenate([[0.0], d.heights, [0.0]])
    # heights[k] applies on [edges[k], edges[k+1]); drop the helper cells later
    shifted = sorted(set(((e + delta) % 1.0) for e in edges) | {0.0, 1.0})
    mids = [(a + b) / 2.0 for a, b in zip(shifted, shifted[1:])]
    new_h = [d.pdf((m - delta) % 1.0) for m in mids]
    atoms = tuple(((p + delta) % 1.0, m) for p, m in d.atoms)
    return PiecewiseConstDensity(np.array(shifted), np.array(new_h), d.domain, atoms)


def mh_kernel(
    target: PiecewiseConstDensity, c: float, proposal: str = "ball"
) -> KernelHandle:
    """Random-walk (or independence) Metropolis targeting a stored density."""
    dom = target.domain
    if proposal == "ball" and dom.kind != "circle":
        raise ValueError("ball proposal requires the circle domain")

    def core(x, u1, u2, u3):
        if proposal == "ball":
            y = (x + c * (2.0 * u2 - 1.0)) % 1.0
        else:
            y = dom.lo + u2 * (dom.hi - dom.lo)
        if u3 * target.pdf_fast(x) < target.pdf_fast(y):
            return y
        return x

    def dens(x):
        prop = (
            uniform_ball_density(x, c) if proposal == "ball" else flat_density(dom)
        )
        return _metropolized_density(prop, target, x, dom)

    return KernelHandle(core, dom, dens)


def _metropolized_density(
    prop: PiecewiseConstDensity,
    target: PiecewiseConstDensity,
    x: float,
    dom: Domain,
) -> PiecewiseConstDensity:
    """Exact one-step MH law: thinned proposal plus the hold atom at x."""
    edges = np.union1d(prop.edges, target.edges)
    edges = edges[(edges >= dom.lo) & (edges <= dom.hi)]
    mids = 0.5 * (edges[:-1] + edges[1:])
    px = target.pdf(x)
    if px <= 0.0:
        raise ValueError("zero target density at the current point")
    q = prop.pdf_array(mids)
    acc = np.minimum(1.0, target.pdf_array(mids) / px)
    heights = q * acc
    cont = float((heights * np.diff(edges)).sum())
    hold = max(0.0, 1.0 - cont)
    atoms = ((x, hold),) if hold > 1e-15 else ()
    return PiecewiseConstDensity(edges, heights, dom, atoms)


def limiting_kernel(
    fam: TemperedFamily,
    i: int,
    spec: EnergyRingSpec,
    p_ee: float,
    c: float,
    proposal: str = "ball",
) -> KernelHandle:
    """Exact one-step law of the limiting sampler at level i:
    (1 - p_ee) K_MH + p_ee (accept-thinned restricted pi_{i+1})."""
    dom = fam.domain
    target = fam.density(i)
    mh = mh_kernel(target, c, proposal)

    def jump_density(x):
        if isinstance(spec, Full):
            restricted = fam.density(i + 1)
        else:
            region = ring_preimage(
                fam.potential, ring_interval(spec, fam.potential.value(x)), dom
            )
            restricted = fam.density(i + 1).restrict(region)
        edges = np.union1d(restricted.edges, target.edges)
        edges = edges[(edges >= dom.lo) & (edges <= dom.hi)]
        mids = 0.5 * (edges[:-1] + edges[1:])
        rho = restricted.pdf_array(mids)
        heights = np.array(
            [
                r * ee_acceptance(fam, i, x, m, spec) if r > 0.0 else 0.0
                for m, r in zip(mids, rho)
            ]
        )
        cont = float((heights * np.diff(edges)).sum())
        hold = max(0.0, 1.0 - cont)
        atoms = ((x, hold),) if hold > 1e-15 else ()
        return PiecewiseConstDensity(edges, heights, dom, atoms)

    def dens(x):
        return mix_densities(
            [(1.0 - p_ee, mh.density_fn(x)), (p_ee, jump_density(x))], dom
        )

    def core(x, u1, u2, u3):
        if u1 >= p_ee:
            return mh.core(x, u1, u2, u3)
        jd = jump_density(x)
        # sample the continuous part, then accept against the thinning that
        # is already folded into jd: draw from it directly
        return jd.sample(u2)

    return KernelHandle(core, dom, dens)


def mix_densities(
    parts: Sequence[tuple[float, PiecewiseConstDensity]], dom: Domain
) -> PiecewiseConstDensity:
    """Weighted mixture of normalized stored densities."""
    edges = np.array([dom.lo, dom.hi])
    for _, d in parts:
        edges = np.union1d(edges, d.edges)
    edges = edges[(edges >= dom.lo) & (edges <= dom.hi)]
    mids = 0.5 * (edges[:-1] + edges[1:])
    heights = np.zeros(len(mids))
    atom_acc: dict[float, float] = {}
    for w, d in parts:
        heights = heights + w * d.pdf_array(mids)
        for p, m in d.atoms:
            atom_acc[p] = atom_acc.get(p, 0.0) + w * m / d.normalization
    atoms = tuple(sorted(atom_acc.items()))
    return PiecewiseConstDensity(edges, heights, dom, atoms)


# ---------------------------------------------------------------------------
# geometric quantities


def eccentricity(x: float, pi: PiecewiseConstDensity) -> float:
    """Mean distance from x to a pi-distributed point (exact)."""
    return pi.eccentricity(x)


def _d2_pieces(circle: bool) -> list[tuple[float, float]]:
    # breakpoints of u -> d(y, y+u)^2 as a function of the raw difference u
    if circle:
        return [(-1.0, -0.5), (-0.5, 0.5), (0.5, 1.0)]
    return [(-1e18, 1e18)]


def _d2_of_diff(u: np.ndarray, circle: bool) -> np.ndarray:
    if not circle:
        return u * u
    a = np.abs(u) % 1.0
    return np.minimum(a, 1.0 - a) ** 2


def _pair_integral(a1, b1, a2, b2, circle):
    """Integral of d(y, z)^2 over [a1,b1] x [a2,b2] (exact, Gauss degree 3)."""
    lo, hi = a2 - b1, b2 - a1
    brk = sorted(
        {lo, hi, a2 - a1, b2 - b1}
        | ({u for u in (-0.5, 0.0, 0.5) if lo < u < hi} if circle else set())
    )
    total = 0.0
    for u0, u1 in zip(brk, brk[1:]):
        if u1 <= u0:
            continue
        half = 0.5 * (u1 - u0)
        mid = 0.5 * (u0 + u1)
        for g in _GAUSS2:
            u = mid + half * g
            length = max(0.0, min(b1, b2 - u) - max(a1, a2 - u))
            total += half * length * float(_d2_of_diff(np.array([u]), circle)[0])
    return total


def expected_sq_distance(dens: PiecewiseConstDensity) -> float:
    """E[d(Y, Z)^2] for Y, Z independent draws from the stored law (exact)."""
    circle = dens.domain.kind == "circle"
    z = dens.normalization
    cells = [
        (a, b, h / z)
        for a, b, h in zip(dens.edges[:-1], dens.edges[1:], dens.heights)
        if h > 0.0
    ]
    atoms = [(p, m / z) for p, m in dens.atoms]
    total = 0.0
    for a1, b1, h1 in cells:
        for a2, b2, h2 in cells:
            total += h1 * h2 * _pair_integral(a1, b1, a2, b2, circle)
    for p, m in atoms:
        for a, b, h in cells:
            pts = sorted({a, b} | ({v for v in ((p - 0.5) % 1.0, p, (p + 0.5) % 1.0)
                                    if a < v < b} if circle else set()))
            seg = 0.0
            for y0, y1 in zip(pts, pts[1:]):
                half, mid = 0.5 * (y1 - y0), 0.5 * (y0 + y1)
                for g in _GAUSS2:
                    y = mid + half * g
                    seg += half * float(_d2_of_diff(np.array([y - p]), circle)[0])
            total += 2.0 * m * h * seg
    for p1, m1 in atoms:
        for p2, m2 in atoms:
            total += m1 * m2 * dens.domain.distance(p1, p2) ** 2
    return total


def coarse_diffusion(
    kernel: KernelHandle, x: float, n_samples: int = 4096, seed: int = 0
) -> tuple[float, float]:
    """sigma^2(x) = (1/2) E[d(Y, Z)^2], Y, Z ~ K(x, .) independent.

    Exact (zero standard error) when the handle carries a density.
    """
    if kernel.density_fn is not None:
        return 0.5 * expected_sq_distance(kernel.density_fn(x)), 0.0
    if n_samples < 2:
        raise ValueError("need n_samples >= 2")
    draws = kernel.sample_many(x, 2 * n_samples, seed)
    y, zv = draws[:n_samples], draws[n_samples:]
    d2 = kernel.domain.distance_array(y, zv) ** 2
    return 0.5 * float(d2.mean()), 0.5 * float(d2.std(ddof=1) / math.sqrt(n_samples))


def _support_intervals(dens: PiecewiseConstDensity) -> list[tuple[float, float]]:
    out = [
        (float(a), float(b))
        for a, b, h in zip(dens.edges[:-1], dens.edges[1:], dens.heights)
        if h > 0.0
    ]
    out += [(p, p) for p, m in dens.atoms if m > 0.0]
    return out


def support_diameter(dens: PiecewiseConstDensity) -> float:
    """diam of Supp K(x, .) under the domain metric."""
    iv = _support_intervals(dens)
    if not iv:
        return 0.0
    dom = dens.domain
    if dom.kind == "interval":
        return max(b for _, b in iv) - min(a for a, _ in iv)
    # circle: the diameter is capped at 1/2 and attained there whenever the
    # support contains an antipodal pair
    for a1, b1 in iv:
        for a2, b2 in iv:
            s, e = (a2 + 0.5) % 1.0, (b2 + 0.5) % 1.0
            shifted = [(s, e)] if s <= e else [(0.0, e), (s, 1.0)]
            for sa, sb in shifted:
                if max(a1, sa) <= min(b1, sb):
                    return 0.5
    pts = [p for ab in iv for p in ab]
    return max(
        dom.distance(p, q) for k, p in enumerate(pts) for q in pts[k:]
    )


def granularity(kernel: KernelHandle, grid_size: int = 128) -> float:
    """(1/2) sup_x diam Supp K(x, .) over a grid of base points."""
    if kernel.density_fn is None:
        raise ValueError("granularity needs the exact one-step density")
    dom = kernel.domain
    xs = dom.lo + (np.arange(grid_size) + 0.5) / grid_size * (dom.hi - dom.lo)
    return 0.5 * max(support_diameter(kernel.density_fn(float(x))) for x in xs)


def arc_chart(center: float) -> Callable[[np.ndarray], np.ndarray]:
    """Distance to the quarter-turn point: globally 1-Lipschitz, and a local
    arc-length coordinate (slope -1) on the half-circle around the center."""
    pivot = (center + 0.25) % 1.0

    def f(y):
        y = np.asarray(y, dtype=float)
        a = np.abs(y - pivot) % 1.0
        return np.minimum(a, 1.0 - a)

    return f


def default_lipschitz_dictionary(
    x: float, domain: Domain = CIRCLE, n_random: int = 8, seed: int = 0
) -> list[Callable[[np.ndarray], np.ndarray]]:
    """Arc-length charts at x plus random 1-Lipschitz distance profiles."""
    fns: list[Callable] = []
    if domain.kind == "circle":
        plus = arc_chart(x)
        fns += [plus, lambda y: -plus(y)]
    else:
        fns += [lambda y: np.asarray(y), lambda y: -np.asarray(y)]
    rng = RngStream(seed, 0, 0)
    for j in range(n_random):
        theta = domain.lo + rng.uniform(2 * j) * (domain.hi - domain.lo)
        a = 2.0 * rng.uniform(2 * j + 1) - 1.0
        fns.append(lambda y, t=theta, s=a: s * domain.distance_array(
            np.asarray(y, dtype=float), np.full(np.shape(y), t)))
    return fns


def local_dimension(
    kernel: KernelHandle,
    x: float,
    dictionary: Sequence[Callable] | None = None,
    n_samples: int = 4096,
    seed: int = 0,
) -> float:
    """Upper bound on n(x): min over the dictionary of E d^2 / E (f(y)-f(z))^2.

    Always >= 1; the minimum equals 1 whenever the dictionary contains an
    arc-length chart and diam Supp K(x, .) <= 1/2 on the circle.
    """
    if dictionary is None:
        dictionary = default_lipschitz_dictionary(x, kernel.domain)
    if not dictionary:
        raise ValueError("need a nonempty dictionary")
    draws = kernel.sample_many(x, 2 * n_samples, seed)
    y, zv = draws[:n_samples], draws[n_samples:]
    num = float((kernel.domain.distance_array(y, zv) ** 2).mean())
    best = 0.0
    for f in dictionary:
        den = float(((np.asarray(f(y)) - np.asarray(f(zv))) ** 2).mean())
        best = max(best, den)
    if best <= 0.0:
        raise ValueError("every dictionary function has zero one-step variation")
    return num / best


# ---------------------------------------------------------------------------
# curvature and kernel distance


def _bootstrap_se(values_fn, n: int, reps: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    stats = [values_fn(rng.integers(0, n, size=n)) for _ in range(reps)]
    return float(np.std(stats, ddof=1))


def curvature(
    kernel_a: KernelHandle,
    kernel_b: KernelHandle | None,
    x: float,
    y: float,
    n_samples: int = 2048,
    seed: int = 0,
    bootstrap: int = 32,
) -> tuple[float, float]:
    """kappa(x, y) = 1 - W(K_A(x, .), K_B(y, .)) / d(x, y) with its SE.

    Exact (SE 0) when both handles carry densities.
    """
    kb = kernel_b if kernel_b is not None else kernel_a
    dom = kernel_a.domain
    dist = dom.distance(x, y)
    if dist == 0.0:
        raise ValueError("curvature needs x != y")
    if kernel_a.density_fn is not None and kb.density_fn is not None:
        wd = w1_densities(kernel_a.density_fn(x), kb.density_fn(y))
        return 1.0 - wd / dist, 0.0
    ya = kernel_a.sample_many(x, n_samples, seed, level=0)
    yb = kb.sample_many(y, n_samples, seed, level=1)

    def stat(idx):
        mu = EmpiricalMeasure.from_points(ya[idx], dom)
        nu = EmpiricalMeasure.from_points(yb[idx], dom)
        return 1.0 - w1(mu, nu) / dist

    base = stat(np.arange(n_samples))
    se = _bootstrap_se(stat, n_samples, bootstrap, seed + 1)
    return base, se


def curvature_inf(
    kernel: KernelHandle,
    pairs: Sequence[tuple[float, float]],
    n_samples: int = 2048,
    seed: int = 0,
) -> tuple[float, float]:
    """Global curvature estimate: inf of kappa(x, y) over the supplied pairs."""
    best, best_se = math.inf, 0.0
    for j, (x, y) in enumerate(pairs):
        k, se = curvature(kernel, None, x, y, n_samples, seed + 7 * j)
        if k < best:
            best, best_se = k, se
    return best, best_se


@dataclass(frozen=True)
class KernelDistanceResult:
    value: float
    grid: np.ndarray
    per_point: np.ndarray
    se: np.ndarray


def kernel_distance(
    k1: KernelHandle,
    k2: KernelHandle,
    grid: np.ndarray | None = None,
    n_samples: int = 2048,
    seed: int = 0,
    bootstrap: int = 32,
    lipschitz_const: float | None = None,
) -> KernelDistanceResult:
    """D(K1, K2) = sup_x W(K1(x, .), K2(x, .)), maximized over a grid.

    With lipschitz_const the grid max is promoted to a certified sup bound by
    adding lipschitz_const times the grid spacing.
    """
    if k1.domain != k2.domain:
        raise ValueError("kernels live on different domains")
    dom = k1.domain
    if grid is None:
        grid = dom.lo + (np.arange(128) + 0.5) / 128 * (dom.hi - dom.lo)
    grid = np.asarray(grid, dtype=float)
    vals = np.zeros(len(grid))
    ses = np.zeros(len(grid))
    exact = k1.density_fn is not None and k2.density_fn is not None
    for j, x in enumerate(grid):
        if exact:
            vals[j] = w1_densities(k1.density_fn(float(x)), k2.density_fn(float(x)))
        else:
            a = k1.sample_many(float(x), n_samples, seed + 2 * j, level=0)
            b = k2.sample_many(float(x), n_samples, seed + 2 * j, level=1)

            def stat(idx, a=a, b=b):
                return w1(
                    EmpiricalMeasure.from_points(a[idx], dom),
                    EmpiricalMeasure.from_points(b[idx], dom),
                )

            vals[j] = stat(np.arange(n_samples))
            ses[j] = _bootstrap_se(stat, n_samples, bootstrap, seed + 2 * j + 1)
    value = float(vals.max())
    if lipschitz_const is not None and len(grid) > 1:
        value += lipschitz_const * float(np.diff(np.sort(grid)).max())
    return KernelDistanceResult(value, grid, vals, ses)


# ---------------------------------------------------------------------------
# concentration-bound evaluators


@dataclass(frozen=True)
class ConcentrationParams:
    """Inputs of the inhomogeneous-chain concentration machinery.

    kappa: curvature lower bound of the reference kernel; c_v: Lipschitz
    constant of the variance envelope; sigma_inf: granularity bound over the
    averaging window; v_envelope(x) must dominate Var K_t(x,.)/kappa there.
    """

    kappa: float
    c_v: float
    sigma_inf: float
    T: int
    T_b: int = 0
    delta: float = 0.0
    v_envelope: Callable[[float], float] | None = None

    def __post_init__(self):
        if not (0.0 < self.kappa <= 1.0):
            raise ValueError("need 0 < kappa <= 1")
        if self.T < 1:
            raise ValueError("need T >= 1")

    @property
    def delta_max(self) -> float:
        return self.kappa / (480.0 * self.c_v + 240.0)

    @property
    def lambda_max(self) -> float:
        terms = [1.0 / 36.0]
        if self.c_v > 0.0:
            terms.append(1.0 / (16.0 * self.c_v))
        if self.sigma_inf > 0.0:
            terms.append(1.0 / (6.0 * self.sigma_inf))
        return self.kappa * self.T * min(terms)


def joulin_ollivier_v2(
    params: ConcentrationParams, sup_ratio: float
) -> tuple[float, float]:
    """V^2 and r_max of the homogeneous-chain tail bound 2 exp(-r^2/(16 V^2)).

    sup_ratio is sup_x sigma^2(x) / (n(x) kappa).
    """
    v2 = (1.0 / (params.kappa * params.T)) * (1.0 + params.T_b / params.T) * sup_ratio
    r_max = 4.0 * v2 * params.kappa * params.T / (3.0 * params.sigma_inf)
    return v2, r_max


def jo_tail_bound(r: float, v2: float) -> float:
    return 2.0 * math.exp(-r * r / (16.0 * v2))


def concentration_bound_thm31(
    params: ConcentrationParams,
    r: float,
    lam: float | str = "auto",
    mean_v_sum: float | None = None,
) -> float:
    """Tail bound 2 exp(-lambda r + 4 lambda^2 S / (kappa T^2)) where S is the
    expected sum of the variance envelope over the averaging window.

    lam='auto' picks the optimizing lambda, capped at lambda_max.
    """
    if params.delta >= params.delta_max:
        raise ValueError(
            f"perturbation {params.delta} >= delta_max {params.delta_max}"
        )
    if mean_v_sum is None:
        raise ValueError("mean_v_sum (expected envelope sum over the window) required")
    if mean_v_sum <= 0.0:
        raise ValueError("mean_v_sum must be positive")
    kt2 = params.kappa * params.T**2
    if lam == "auto":
        lam_v = min(params.lambda_max, r * kt2 / (8.0 * mean_v_sum))
    else:
        lam_v = float(lam)
        if lam_v > params.lambda_max:
            raise ValueError(f"lambda {lam_v} > lambda_max {params.lambda_max}")
    return 2.0 * math.exp(-lam_v * r + 4.0 * lam_v**2 * mean_v_sum / kt2)


def wasserstein_mixing_bound(
    delta: float,
    kappa: float,
    T: int,
    ecc_x: float,
    tail_masses: Sequence[float] = (),
    diameter: float = 0.5,
) -> float:
    """W(law(X_T), pi) <= delta/kappa + (1-kappa)^T E(x) + diam * escape mass."""
    if kappa <= 0.0:
        raise ValueError("need kappa > 0")
    return (
        delta / kappa
        + (1.0 - kappa) ** T * ecc_x
        + diameter * float(sum(tail_masses))
    )


def mixing_bias_bound(delta: float, kappa: float, T: int, mean_ecc: float) -> float:
    """|E pi_hat(f) - pi(f)| <= 2 delta/kappa + E[E(X_0)]/(kappa T), f 1-Lip."""
    if kappa <= 0.0:
        raise ValueError("need kappa > 0")
    return 2.0 * delta / kappa + mean_ecc / (kappa * T)


def power_contraction_bound(delta: float, kappa: float, k: int, dist: float) -> float:
    """W((prod K_t)(x,.), K^k(y,.)) <= delta sum (1-kappa)^i + (1-kappa)^k d."""
    return delta * sum((1.0 - kappa) ** i for i in range(k)) + (
        1.0 - kappa
    ) ** k * dist


# ---------------------------------------------------------------------------
# discretized chains and spectra


@dataclass(frozen=True)
class DiscretizedChain:
    """Midpoint discretization of a kernel: row-stochastic matrix + stationary."""

    matrix: np.ndarray
    stationary: np.ndarray
    edges: np.ndarray
    domain: Domain = CIRCLE

    def __post_init__(self):
        p = np.asarray(self.matrix, dtype=float)
        pi = np.asarray(self.stationary, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or len(pi) != p.shape[0]:
            raise ValueError("matrix/stationary shape mismatch")
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("rows must sum to 1 within 1e-12")
        if np.abs(pi @ p - pi).max() > 1e-10:
            raise ValueError("stationary vector not fixed within 1e-10")
        object.__setattr__(self, "matrix", p)
        object.__setattr__(self, "stationary", pi)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def discretize_kernel(
    kernel: KernelHandle, n: int = 512, stationary: np.ndarray | None = None
) -> DiscretizedChain:
    """Exact cell-mass discretization of a density-carrying kernel."""
    if kernel.density_fn is None:
        raise ValueError("discretization needs the exact one-step density")
    dom = kernel.domain
    edges = np.linspace(dom.lo, dom.hi, n + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    p = np.zeros((n, n))
    for i, x in enumerate(mids):
        f = kernel.density_fn(float(x)).cdf_strict_array(edges)
        row = np.diff(f)
        p[i] = row / row.sum()
    if stationary is None:
        a = np.vstack([p.T - np.eye(n), np.ones(n)])
        b = np.concatenate([np.zeros(n), [1.0]])
        stationary, *_ = np.linalg.lstsq(a, b, rcond=None)
    return DiscretizedChain(p, np.asarray(stationary, dtype=float), edges, dom)


def discretize_mh(
    target: PiecewiseConstDensity, c: float, n: int = 512
) -> DiscretizedChain:
    """Exact midpoint chain of ball-proposal Metropolis on the circle.

    Requires the grid to refine the target's cells so per-cell acceptance is
    constant; detailed balance then holds to machine precision.
    """
    if target.domain.kind != "circle":
        raise ValueError("discretize_mh assumes the circle domain")
    edges = np.linspace(0.0, 1.0, n + 1)
    for e in target.edges:
        pos = e * n
        if abs(pos - round(pos)) > 1e-9:
            raise ValueError("grid must align with the target's breakpoints")
    w = 1.0 / n
    mids = 0.5 * (edges[:-1] + edges[1:])
    h = target.pdf_array(mids)
    if np.any(h <= 0.0):
        raise ValueError("target must be positive everywhere")
    # proposal mass from any midpoint to the cell at signed offset k
    k = np.arange(n)
    k = np.where(k > n // 2, k - n, k)  # signed circular offsets
    lo = np.maximum(-c, k * w - w / 2.0)
    hi = np.minimum(c, k * w + w / 2.0)
    offset_mass = np.maximum(0.0, hi - lo) / (2.0 * c)
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    q = offset_mass[idx]
    acc = np.minimum(1.0, h[None, :] / h[:, None])
    p = q * acc
    np.fill_diagonal(p, p.diagonal() + 1.0 - p.sum(axis=1))
    pi = h * w
    pi = pi / pi.sum()
    return DiscretizedChain(p, pi, edges, target.domain)


def relaxation_time(chain: DiscretizedChain) -> float:
    """1/(1 - |lambda_2|) of a reversible chain (checked, then symmetrized)."""
    p, pi = chain.matrix, chain.stationary
    flow = pi[:, None] * p
    if np.abs(flow - flow.T).max() > 1e-8:
        raise ValueError("chain is not reversible")
    s = np.sqrt(pi)
    sym = (s[:, None] / s[None, :]) * p
    sym = 0.5 * (sym + sym.T)
    evals = np.linalg.eigvalsh(sym)
    second = max(abs(evals[0]), abs(evals[-2]))
    return 1.0 / (1.0 - second)


def bottleneck(chain: DiscretizedChain, region: IntervalUnion) -> float:
    """Stationary-weighted escape rate Phi(A) out of the region."""
    inside = region.contains_array(chain.midpoints)
    mass = float(chain.stationary[inside].sum())
    if mass <= 0.0:
        raise ValueError("region carries no stationary mass")
    flow = float(
        (chain.stationary[inside, None] * chain.matrix[inside][:, ~inside]).sum()
    )
    return flow / mass


def cheeger_upper(m: int, h: float) -> float:
    """Closed-form bottleneck upper bound 8 M e^{-H} for the M-well target."""
    return 8.0 * m * math.exp(-h)


# ---------------------------------------------------------------------------
# autocovariance bounds for the square-tooth comparison


def ee_autocov_bound(
    m: int, c: float, p_ee: float, eps: float, h: float, s: int
) -> float:
    """Upper bound 2 e^{-A1 c floor(S/4)} + 2 eps + A2 on the normalized
    equi-energy autocovariance at lag S."""
    if not (0.0 < p_ee < 1.0):
        raise ValueError("need 0 < p_ee < 1")
    if not (0.0 < eps < min(1.0 / 512.0, c * m / 384.0)):
        raise ValueError("need 0 < eps < min(1/512, cM/384)")
    if c <= 0.0 or m < 2 or h <= 0.0 or s < 0:
        raise ValueError("parameters outside the theorem's ranges")
    a1 = min(p_ee * (1.0 - p_ee) * m / 32.0, p_ee / (2.0 * c))
    c1 = ((1.0 - p_ee) / 4.0) * (p_ee / 4.0) * (c * m / 16.0 - eps)
    a = (1.0 / (2.0 * c)) * min(p_ee, c1)
    a2 = (16.0 * math.e * h / (a * c)) * math.exp(-h)
    return 2.0 * math.exp(-a1 * c * (s // 4)) + 2.0 * eps + a2


def pt_autocov_lower(m: int, c: float, s: int) -> float:
    """Lower bound 1/32 - e^{-1/(1024 M^2 c^2 S)} on the normalized
    parallel-tempering autocovariance at lag S."""
    if m < 2 or m % 2 != 0:
        raise ValueError("need even M >= 2")
    if c <= 0.0 or s < 1:
        raise ValueError("need c > 0 and S >= 1")
    return 1.0 / 32.0 - math.exp(-1.0 / (1024.0 * m * m * c * c * s))


# ---------------------------------------------------------------------------
# good sequences


def h1(eps: float, delta: float, s: float, k: int, alpha: float, c_lip: float,
       m: int, n_cov: float) -> float:
    """First schedule function: a lower bound on usable window lengths."""
    ck = 2.0 + k * c_lip**k
    return max(
        8.0 * ck / (alpha * eps),
        4.0 * s / eps,
        (32.0 * k**3 / (alpha * eps**2))
        * (2.0 + math.log(2.0 * k) + math.log(1.0 / delta) + n_cov * (4.0 / eps) ** m),
    )


def h2(eps: float, delta: float, s: float, k: int, alpha: float, c_lip: float,
       m: int, n_cov: float) -> float:
    """Second schedule function: a lower bound on inverse tolerances."""
    return 16.0 * (2.0 + k * c_lip**k) / (eps * alpha)


def _h34_eps(eps: float, b_const: float, p_ee: float) -> float:
    return eps * eps / (b_const * b_const * p_ee * p_ee)


def h3(eps, delta, s, k, alpha, c_lip, m, n_cov, b_const, p_ee) -> float:
    return h1(_h34_eps(eps, b_const, p_ee), delta, s, k, alpha, c_lip, m, n_cov)


def h4(eps, delta, s, k, alpha, c_lip, m, n_cov, b_const, p_ee) -> float:
    return h2(_h34_eps(eps, b_const, p_ee), delta, s, k, alpha, c_lip, m, n_cov)


@dataclass(frozen=True)
class GoodSequence:
    """Recursive schedule of window lengths, burn-in gaps, burn-ins, and
    tolerances certifying level-by-level kernel convergence."""

    g: tuple[float, ...]
    b: tuple[int, ...]
    t_b: tuple[int, ...]
    eps: tuple[float, ...]


def good_sequence(
    eps0: float,
    delta: float,
    k: int,
    alpha: float,
    c_lip: float,
    m: int,
    n_cov: float,
    b_const: float,
    p_ee: float,
    g0: float,
    n_levels: int,
) -> GoodSequence:
    """Build the iterative schedule G_i = 2i(G_{i-1} + B_{i-1} + 1),
    eps_i^{-1} = ceil(H3), B_i = ceil(H4), T_b cumulated downward."""
    if min(eps0, delta, alpha, c_lip, b_const, p_ee, g0) <= 0 or k < 1:
        raise ValueError("all inputs must be positive and k >= 1")
    if n_levels < 1:
        raise ValueError("need n_levels >= 1")
    dshare = delta / (n_levels + 1)
    g = [float(g0)]
    b = [0]
    eps = [float(eps0)]
    for i in range(1, n_levels + 1):
        gi = 2.0 * i * g[i - 1] + 2.0 * i * b[i - 1] + 2.0 * i
        ei = 1.0 / math.ceil(
            h3(eps[i - 1], dshare, gi, k, alpha, c_lip, m, n_cov, b_const, p_ee)
        )
        bi = math.ceil(
            h4(eps[i - 1], dshare, gi, k, alpha, c_lip, m, n_cov, b_const, p_ee)
        )
        g.append(gi)
        eps.append(ei)
        b.append(bi)
    t_b = [0] * (n_levels + 1)
    for i in range(n_levels, 0, -1):
        t_b[i - 1] = t_b[i] + b[i]
    for i in range(1, n_levels + 1):
        assert t_b[i - 1] >= t_b[i] + b[i]
        # equivalent to t_b[i-1] <= t_b[i] + (b[i] - b[i-1]) + (g[i] - g[i-1])
        # after substituting t_b[i-1] = t_b[i] + b[i]; stated this way the
        # comparison stays exact when the burn-ins outgrow float resolution
        assert b[i - 1] <= g[i] - g[i - 1]
    return GoodSequence(tuple(g), tuple(b), tuple(t_b), tuple(eps))

"""The stochastic processes: random-walk Metropolis, the equi-energy
sampler, its limiting sampler, and two-temperature parallel tempering.

All levels advance in lockstep: one clock tick moves every active level
once.  Level i is frozen at its initial point until t = T_b^(i); burn-ins
are nonincreasing going down the ladder, so the level above is always
running before the level below starts reading its history.  The proposal
pool D of level i at tick t contains the level-(i+1) states with timestamps
T_b^(i+1) <= s <= t (the current tick included), kept with multiplicity.

Randomness: each (replica, level) owns a counter-based stream, and every
step consumes exactly three uniforms (move-type, proposal, acceptance) on
every branch.  That makes the p_ee = 0 reductions exact: an EE level with
p_ee = 0 replays the MH chain byte for byte, and PT with p_ee = 0 replays
two independent MH chains.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CIRCLE, Domain, EmpiricalMeasure
from .rng import SUB_INIT, RngStream
from .targets import (
    Band,
    EnergyRingSpec,
    Full,
    Ladder,
    PiecewiseConstDensity,
    TemperedFamily,
    ring_index,
    ring_interval,
    ring_preimage,
    ee_acceptance,
)

# move kinds
MH_ACCEPT = "MH-accept"
MH_REJECT = "MH-reject"
EE_ACCEPT = "EE-accept"
EE_REJECT = "EE-reject"
EE_SKIP = "EE-skip"
SWAP = "swap"
HOLD = "hold"

MOVE_KINDS = (MH_ACCEPT, MH_REJECT, EE_ACCEPT, EE_REJECT, EE_SKIP, SWAP, HOLD)

SAMPLER_KINDS = ("EE", "LIMITING", "PT", "MH")

_BLOCK = 1 << 15  # uniform prefetch chunk (steps)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InitSpec:
    """How a level picks X_{T_b}: a fixed point, a uniform draw, or the
    mixture (1-p_ee) * uniform + p_ee * Unif(level-above history)."""

    kind: str = "point"  # "point" | "uniform" | "mixture-history"
    point: float = 0.0


@dataclass(frozen=True)
class LevelConfig:
    burn_in: int = 0
    init: InitSpec = InitSpec()


@dataclass(frozen=True)
class SamplerConfig:
    kind: str
    family: TemperedFamily
    rings: EnergyRingSpec
    c: float
    p_ee: float
    levels: tuple[LevelConfig, ...]
    t_end: int
    proposal: str = "ball"  # "ball" (circle) | "independent"

    def validate(self) -> None:
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if len(self.levels) != self.family.n_levels:
            raise ValueError(
                f"level count mismatch: {len(self.levels)} configs for "
                f"{self.family.n_levels} family levels"
            )
        if self.kind == "PT" and len(self.levels) != 2:
            raise ValueError("PT supports exactly two temperatures")
        if not (0.0 <= self.p_ee <= 1.0):
            raise ValueError("need 0 <= p_ee <= 1")
        if self.proposal not in ("ball", "independent"):
            raise ValueError(f"unknown proposal kind {self.proposal!r}")
        dom = self.family.domain
        if self.proposal == "ball":
            if dom.kind != "circle":
                raise ValueError("ball proposal requires the circle domain")
            if not (0.0 < self.c < 0.5):
                raise ValueError("ball radius must satisfy 0 < c < 1/2")
        burnins = [lc.burn_in for lc in self.levels]
        if any(b < 0 for b in burnins):
            raise ValueError("burn-ins must be >= 0")
        if any(b1 < b2 for b1, b2 in zip(burnins, burnins[1:])):
            raise ValueError("burn-ins must be nonincreasing in the level index")
        if self.t_end < max(burnins):
            raise ValueError("t_end must be >= every burn-in")


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceEntry:
    t: int
    x: float
    kind: str


@dataclass
class Trace:
    """Per-level (t, point, move-kind) sequences for t in [T_b^(i), T_end]."""

    levels: list[list[TraceEntry]]

    def points(self, i: int) -> np.ndarray:
        return np.array([e.x for e in self.levels[i]])

    def times(self, i: int) -> np.ndarray:
        return np.array([e.t for e in self.levels[i]])

    def kinds(self, i: int) -> list[str]:
        return [e.kind for e in self.levels[i]]

    def to_csv(self, path, replica: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "level", "t", "x", "move_kind"])
            for i, entries in enumerate(self.levels):
                for e in entries:
                    w.writerow([replica, i, e.t, repr(e.x), e.kind])


# ---------------------------------------------------------------------------
# multi-level state


@dataclass
class MultiLevelState:
    """Current points, visible histories and ring buckets, on a common clock.

    histories[j] holds X_s^(j) for T_b^(j) <= s <= t; for Ladder specs the
    same states are bucketed by ring index (the D-hat sets); for Band and
    Full specs ring queries filter the raw history by potential value.
    """

    config: SamplerConfig
    t: int
    current: list[float]
    started: list[bool]
    histories: list[list[float]]
    buckets: list[dict[int, list[float]]]
    pot_histories: list[list[float]]

    def ring_values(self, i: int, v: float) -> list[float]:
        """Proposal pool of level i at potential value v (level i+1 states)."""
        spec = self.config.rings
        j = i + 1
        if isinstance(spec, Ladder):
            return self.buckets[j].get(ring_index(spec, v), [])
        if isinstance(spec, Full):
            return self.histories[j]
        h1, h2 = ring_interval(spec, v)
        return [
            x
            for x, pv in zip(self.histories[j], self.pot_histories[j])
            if h1 <= pv < h2
        ]

    def check_ring_consistency(self) -> None:
        """Debug invariant: bucket contents equal a filter of the history."""
        spec = self.config.rings
        if not isinstance(spec, Ladder):
            return
        pot = self.config.family.potential
        for j in range(1, len(self.histories)):
            refilter: dict[int, list[float]] = {}
            for x in self.histories[j]:
                refilter.setdefault(ring_index(spec, pot.value(x)), []).append(x)
            if refilter != {k: v for k, v in self.buckets[j].items() if v}:
                raise AssertionError(f"ring buckets inconsistent at level {j}")


def ring_lookup(
    state: MultiLevelState, i: int, v: float, spec: EnergyRingSpec | None = None
) -> EmpiricalMeasure:
    """Uniform empirical measure on the proposal pool (empty measure allowed)."""
    if spec is not None and spec != state.config.rings:
        raise ValueError("ring spec differs from the state's configuration")
    vals = state.ring_values(i, v)
    dom = state.config.family.domain
    if not vals:
        return EmpiricalMeasure(np.array([]), np.array([]), dom)
    return EmpiricalMeasure.from_points(vals, dom)


# ---------------------------------------------------------------------------
# single steps (triple-driven cores)


def _mh_core(
    x: float,
    u_prop: float,
    u_acc: float,
    c: float,
    target: PiecewiseConstDensity,
    domain: Domain,
    proposal: str,
) -> tuple[float, str]:
    if proposal == "ball":
        y = (x + c * (2.0 * u_prop - 1.0)) % 1.0
    else:
        y = domain.lo + u_prop * (domain.hi - domain.lo)
    py = target.pdf_fast(y)
    px = target.pdf_fast(x)
    if px <= 0.0:
        raise ValueError("zero target density at the current point")
    if u_acc * px < py:
        return y, MH_ACCEPT
    return x, MH_REJECT


def mh_step(
    x: float,
    c: float,
    target: PiecewiseConstDensity,
    rng: RngStream,
    t: int = 0,
    proposal: str = "ball",
) -> tuple[float, str]:
    """One Metropolis step; burns the full 3-variate step budget."""
    _, u_prop, u_acc = rng.triple(t)
    return _mh_core(x, u_prop, u_acc, c, target, target.domain, proposal)


def _ee_core(
    state: MultiLevelState,
    i: int,
    triple: tuple[float, float, float],
    dens_i: PiecewiseConstDensity,
) -> tuple[float, str]:
    cfg = state.config
    u_move, u_prop, u_acc = triple
    x = state.current[i]
    if u_move >= cfg.p_ee:
        return _mh_core(x, u_prop, u_acc, cfg.c, dens_i, cfg.family.domain, cfg.proposal)
    pool = state.ring_values(i, cfg.family.potential.value(x))
    if not pool:
        return x, EE_SKIP
    q = pool[min(int(u_prop * len(pool)), len(pool) - 1)]
    a = ee_acceptance(cfg.family, i, x, q, cfg.rings)
    if u_acc < a:
        return q, EE_ACCEPT
    return x, EE_REJECT


def ee_step(
    state: MultiLevelState,
    i: int,
    p_ee: float,
    fam: TemperedFamily,
    spec: EnergyRingSpec,
    c: float,
    rng: RngStream,
    t: int | None = None,
) -> tuple[float, str]:
    """One equi-energy step of level i (Algorithm-1 style)."""
    cfg = replace(state.config, p_ee=p_ee, rings=spec, c=c)
    st = replace_state_config(state, cfg)
    tt = state.t if t is None else t
    return _ee_core(st, i, rng.triple(tt), fam.density(i))


def replace_state_config(state: MultiLevelState, cfg: SamplerConfig) -> MultiLevelState:
    return MultiLevelState(
        cfg,
        state.t,
        state.current,
        state.started,
        state.histories,
        state.buckets,
        state.pot_histories,
    )


def _limiting_core(
    x: float,
    i: int,
    triple: tuple[float, float, float],
    cfg: SamplerConfig,
    dens_i: PiecewiseConstDensity,
    restricted_cache: dict,
) -> tuple[float, str]:
    u_move, u_prop, u_acc = triple
    if u_move >= cfg.p_ee:
        return _mh_core(x, u_prop, u_acc, cfg.c, dens_i, cfg.family.domain, cfg.proposal)
    pot = cfg.family.potential
    v = pot.value(x)
    if isinstance(cfg.rings, Full):
        restricted = cfg.family.density(i + 1)
    else:
        if isinstance(cfg.rings, Ladder):
            key = (i, ring_index(cfg.rings, v))
        else:
            key = (i, v)
        restricted = restricted_cache.get(key)
        if restricted is None:
            region = ring_preimage(pot, ring_interval(cfg.rings, v), cfg.family.domain)
            restricted = cfg.family.density(i + 1).restrict(region)
            restricted_cache[key] = restricted
    q = restricted.sample(u_prop)
    a = ee_acceptance(cfg.family, i, x, q, cfg.rings)
    if u_acc < a:
        return q, EE_ACCEPT
    return x, EE_REJECT


def limiting_step(
    x: float,
    i: int,
    p_ee: float,
    fam: TemperedFamily,
    spec: EnergyRingSpec,
    c: float,
    rng: RngStream,
    t: int = 0,
    proposal: str = "ball",
) -> tuple[float, str]:
    """One step of the limiting sampler: the EE proposal pool is replaced by
    the exact restricted target pi_{i+1} | V^{-1}(H(V(x)))."""
    cfg = SamplerConfig(
        "LIMITING", fam, spec, c, p_ee,
        tuple(LevelConfig() for _ in range(fam.n_levels)), 1, proposal,
    )
    return _limiting_core(x, i, rng.triple(t), fam.density(i), cfg, {})


def _pt_core(
    x0: float,
    x1: float,
    triple0: tuple[float, float, float],
    triple1: tuple[float, float, float],
    cfg: SamplerConfig,
    dens0: PiecewiseConstDensity,
    dens1: PiecewiseConstDensity,
) -> tuple[float, float, str, str]:
    u_move = triple0[0]
    pot = cfg.family.potential
    if u_move < cfg.p_ee:
        b0 = cfg.family.levels[0][0]
        b1 = cfg.family.levels[1][0]
        logp = -(pot.value(x0) - pot.value(x1)) * (b0 - b1)
        if math.log(max(triple0[2], 1e-300)) < logp:
            return x1, x0, SWAP, SWAP
        return x0, x1, HOLD, HOLD
    y0, k0 = _mh_core(
        x0, triple0[1], triple0[2], cfg.c, dens0, cfg.family.domain, cfg.proposal
    )
    y1, k1 = _mh_core(
        x1, triple1[1], triple1[2], cfg.c, dens1, cfg.family.domain, cfg.proposal
    )
    return y0, y1, k0, k1


def pt_step(
    x0: float,
    x1: float,
    p_ee: float,
    betas: tuple[float, float],
    pot,
    c: float,
    rng0: RngStream,
    rng1: RngStream,
    t: int = 0,
    fam: TemperedFamily | None = None,
) -> tuple[float, float, str]:
    """One parallel-tempering tick: independent MH moves, or a swap attempt
    with probability min(1, exp(-(V(x0)-V(x1)) (beta0-beta1)))."""
    if betas[0] <= betas[1]:
        raise ValueError("need beta0 > beta1")
    if fam is None:
        fam = TemperedFamily(pot, ((betas[0], 0.0), (betas[1], 0.0)))
    cfg = SamplerConfig(
        "PT", fam, Full(), c, p_ee, (LevelConfig(), LevelConfig()), 1
    )
    y0, y1, k0, _ = _pt_core(
        x0, x1, rng0.triple(t), rng1.triple(t), cfg, fam.density(0), fam.density(1)
    )
    return y0, y1, k0


# ---------------------------------------------------------------------------
# the multi-level runner


class _TripleFeed:
    """Chunked per-level prefetch of step triples."""

    def __init__(self, stream: RngStream):
        self.stream = stream
        self.base = 0
        self.chunk: list | None = None

    def triple(self, t: int) -> tuple[float, float, float]:
        if self.chunk is None or not (self.base <= t < self.base + _BLOCK):
            self.base = (t // _BLOCK) * _BLOCK
            self.chunk = self.stream.block(self.base, self.base + _BLOCK).tolist()
        u = self.chunk[t - self.base]
        return (u[0], u[1], u[2])


def run_multilevel(
    config: SamplerConfig,
    seed: int,
    replica: int = 0,
    ring_check_every: int | None = None,
) -> Trace:
    """Advance all levels in lockstep from t=0 to t=T_end; returns the Trace.

    Level i contributes entries for t in [T_b^(i), T_end]; the entry at
    T_b^(i) is the initial point (kind 'hold').
    """
    config.validate()
    fam = config.family
    dom = fam.domain
    n = fam.n_levels
    burnins = [lc.burn_in for lc in config.levels]

    state = MultiLevelState(
        config=config,
        t=0,
        current=[0.0] * n,
        started=[False] * n,
        histories=[[] for _ in range(n)],
        buckets=[{} for _ in range(n)],
        pot_histories=[[] for _ in range(n)],
    )
    feeds = [_TripleFeed(RngStream(seed, replica, i)) for i in range(n)]
    densities = [fam.density(i) for i in range(n)]
    trace: list[list[TraceEntry]] = [[] for _ in range(n)]
    restricted_cache: dict = {}
    is_ladder = isinstance(config.rings, Ladder)
    pot = fam.potential

    def commit(j: int, x: float) -> None:
        """Make X^(j) visible to the level below."""
        state.histories[j].append(x)
        pv = pot.value(x)
        state.pot_histories[j].append(pv)
        if is_ladder:
            state.buckets[j].setdefault(ring_index(config.rings, pv), []).append(x)

    def initialize(i: int) -> None:
        init = config.levels[i].init
        u = RngStream(seed, replica, i, SUB_INIT).triple(0)
        if init.kind == "point":
            x = dom.wrap(init.point)
        elif init.kind == "uniform":
            x = dom.lo + u[1] * (dom.hi - dom.lo)
        elif init.kind == "mixture-history":
            hist = state.histories[i + 1]
            if u[0] < config.p_ee and hist:
                x = hist[min(int(u[1] * len(hist)), len(hist) - 1)]
            else:
                x = dom.lo + u[1] * (dom.hi - dom.lo)
        else:
            raise ValueError(f"unknown init kind {init.kind!r}")
        state.current[i] = x
        state.started[i] = True
        trace[i].append(TraceEntry(state.t, x, HOLD))
        if i >= 1:
            commit(i, x)

    for t in range(config.t_end + 1):
        state.t = t
        # start levels whose burn-in ends now (top first: a level starting
        # at the same tick as the one above can already see its init point)
        for i in range(n - 1, -1, -1):
            if not state.started[i] and t == burnins[i]:
                initialize(i)
        if t == config.t_end:
            break

        new_points: list[tuple[int, float, str]] = []
        if config.kind == "PT" and state.started[0]:
            y0, y1, k0, k1 = _pt_core(
                state.current[0],
                state.current[1],
                feeds[0].triple(t),
                feeds[1].triple(t),
                config,
                densities[0],
                densities[1],
            )
            new_points += [(0, y0, k0), (1, y1, k1)]
        else:
            for i in range(n - 1, -1, -1):
                if not state.started[i]:
                    continue
                trip = feeds[i].triple(t)
                if config.kind == "EE" and i < n - 1:
                    y, k = _ee_core(state, i, trip, densities[i])
                elif config.kind == "LIMITING" and i < n - 1:
                    y, k = _limiting_core(
                        state.current[i],
                        i,
                        trip,
                        config,
                        densities[i],
                        restricted_cache,
                    )
                else:
                    # plain MH: the top level of every sampler, all levels of
                    # the MH sampler, and PT's hot level during the cold burn-in
                    y, k = _mh_core(
                        state.current[i],
                        trip[1],
                        trip[2],
                        config.c,
                        densities[i],
                        dom,
                        config.proposal,
                    )
                new_points.append((i, y, k))

        for i, y, k in new_points:
            state.current[i] = y
            trace[i].append(TraceEntry(t + 1, y, k))
        for i, y, _ in new_points:
            if i >= 1:
                commit(i, y)
        if ring_check_every and (t + 1) % ring_check_every == 0:
            state.check_ring_consistency()

    return Trace(trace)

"""Sampler tests: exact reductions, determinism, ring bookkeeping, and the
marginal law of the independence-proposal chains."""

import csv

import numpy as np
import pytest
from scipy import stats

from eelab.geometry import CIRCLE, EmpiricalMeasure, interval_domain
from eelab.rng import RngStream
from eelab.samplers import (
    EE_ACCEPT,
    EE_SKIP,
    HOLD,
    MH_ACCEPT,
    MH_REJECT,
    SWAP,
    InitSpec,
    LevelConfig,
    MultiLevelState,
    SamplerConfig,
    mh_step,
    pt_step,
    ring_lookup,
    run_multilevel,
)
from eelab.samplers import _ee_core  # the triple-driven core, for edge cases
from eelab.targets import (
    Flat,
    Full,
    Ladder,
    SquareTooth,
    TemperedFamily,
    flat_density,
    w1_density_measure,
)


def square_family(m=4, h=5.0, k=1):
    """K+1 tempered levels over the M-well square tooth."""
    levels = tuple((1.0 / 2**i, 0.0) for i in range(k + 1))
    return TemperedFamily(SquareTooth(m, float(h)), levels)


def uniform46_config(p_ee=0.1, t_end=400, t_b=20):
    """Two flat levels on [-1/2, 1/2] with the independence proposal."""
    dom = interval_domain(-0.5, 0.5)
    fam = TemperedFamily(Flat(), ((1.0, 0.0), (0.5, 0.0)), dom)
    return SamplerConfig(
        kind="EE",
        family=fam,
        rings=Full(),
        c=0.1,
        p_ee=p_ee,
        levels=(
            LevelConfig(burn_in=t_b, init=InitSpec("mixture-history")),
            LevelConfig(burn_in=0, init=InitSpec("uniform")),
        ),
        t_end=t_end,
        proposal="independent",
    )


def test_config_validation():
    fam = square_family()
    good = SamplerConfig(
        "EE", fam, Ladder((0.0, 5.0)), 0.05, 0.1,
        (LevelConfig(10), LevelConfig(0)), 100,
    )
    good.validate()
    with pytest.raises(ValueError, match="level count"):
        SamplerConfig(
            "EE", fam, Full(), 0.05, 0.1, (LevelConfig(),), 100
        ).validate()
    with pytest.raises(ValueError, match="nonincreasing"):
        SamplerConfig(
            "EE", fam, Full(), 0.05, 0.1,
            (LevelConfig(0), LevelConfig(10)), 100,
        ).validate()
    with pytest.raises(ValueError, match="ball radius"):
        SamplerConfig(
            "EE", fam, Full(), 0.7, 0.1,
            (LevelConfig(10), LevelConfig(0)), 100,
        ).validate()
    with pytest.raises(ValueError, match="t_end"):
        SamplerConfig(
            "EE", fam, Full(), 0.05, 0.1,
            (LevelConfig(200), LevelConfig(0)), 100,
        ).validate()
    with pytest.raises(ValueError, match="circle"):
        uni = uniform46_config()
        SamplerConfig(
            uni.kind, uni.family, uni.rings, uni.c, uni.p_ee,
            uni.levels, uni.t_end, proposal="ball",
        ).validate()
    with pytest.raises(ValueError, match="two temperatures"):
        fam3 = square_family(k=2)
        SamplerConfig(
            "PT", fam3, Full(), 0.05, 0.1,
            tuple(LevelConfig() for _ in range(3)), 100,
        ).validate()


def test_determinism():
    cfg = uniform46_config(t_end=300)
    a = run_multilevel(cfg, seed=99)
    b = run_multilevel(cfg, seed=99)
    for i in range(2):
        assert a.levels[i] == b.levels[i]
    c = run_multilevel(cfg, seed=100)
    assert c.levels[0] != a.levels[0]


def test_trace_shape_and_clock():
    cfg = uniform46_config(t_end=300, t_b=20)
    tr = run_multilevel(cfg, seed=1)
    assert [e.t for e in tr.levels[1]] == list(range(0, 301))
    assert [e.t for e in tr.levels[0]] == list(range(20, 301))
    assert tr.levels[0][0].kind == HOLD
    assert tr.levels[1][0].kind == HOLD


def test_pee_zero_reduces_ee_to_mh():
    fam = square_family()
    mk = lambda kind: SamplerConfig(
        kind, fam, Ladder((0.0, 5.0)), 0.05, 0.0,
        (LevelConfig(50, InitSpec("point", 0.1)), LevelConfig(0, InitSpec("point", 0.1))),
        500,
    )
    ee = run_multilevel(mk("EE"), seed=7)
    mh = run_multilevel(mk("MH"), seed=7)
    lim = run_multilevel(mk("LIMITING"), seed=7)
    for i in range(2):
        assert ee.levels[i] == mh.levels[i]
        assert lim.levels[i] == mh.levels[i]


def test_pee_zero_reduces_pt_to_two_mh_chains():
    fam = square_family(k=1)
    mk = lambda kind: SamplerConfig(
        kind, fam, Full(), 0.05, 0.0,
        (LevelConfig(0, InitSpec("point", 0.3)), LevelConfig(0, InitSpec("point", 0.3))),
        500,
    )
    pt = run_multilevel(mk("PT"), seed=11)
    mh = run_multilevel(mk("MH"), seed=11)
    for i in range(2):
        assert pt.levels[i] == mh.levels[i]


def test_ring_consistency_invariant():
    fam = square_family()
    cfg = SamplerConfig(
        "EE", fam, Ladder((0.0, 5.0)), 0.05, 0.2,
        (LevelConfig(100, InitSpec("uniform")), LevelConfig(0, InitSpec("uniform"))),
        2000,
    )
    run_multilevel(cfg, seed=3, ring_check_every=100)  # raises on violation


def test_empty_ring_gives_ee_skip():
    # level-1 history pinned in the high ring, level-0 point in the low ring
    fam = square_family()
    cfg = SamplerConfig(
        "EE", fam, Ladder((0.0, 5.0)), 0.01, 0.9,
        (LevelConfig(), LevelConfig()), 10,
    )
    state = MultiLevelState(
        cfg, 5, [0.05, 0.4], [True, True],
        [[], [0.4, 0.45]], [{}, {1: [0.4, 0.45]}], [[], [5.0, 5.0]],
    )
    y, kind = _ee_core(state, 0, (0.5, 0.3, 0.7), fam.density(0))
    assert kind == EE_SKIP and y == 0.05
    # nonempty matching ring: the jump proposal is drawn from the bucket
    state.buckets[1][0] = [0.05, 0.1]
    state.histories[1] = [0.05, 0.1, 0.4, 0.45]
    state.pot_histories[1] = [0.0, 0.0, 5.0, 5.0]
    y, kind = _ee_core(state, 0, (0.5, 0.9, 0.7), fam.density(0))
    assert kind == EE_ACCEPT and y == 0.1


def test_ring_lookup_measure():
    fam = square_family()
    cfg = SamplerConfig(
        "EE", fam, Ladder((0.0, 5.0)), 0.05, 0.1,
        (LevelConfig(), LevelConfig()), 10,
    )
    state = MultiLevelState(
        cfg, 3, [0.05, 0.1], [True, True],
        [[], [0.1, 0.1, 0.4]], [{}, {0: [0.1, 0.1], 1: [0.4]}],
        [[], [0.0, 0.0, 5.0]],
    )
    mu = ring_lookup(state, 0, 0.0)
    assert isinstance(mu, EmpiricalMeasure)
    # repeated atoms merge with doubled weight
    assert np.allclose(mu.points, [0.1]) and np.allclose(mu.weights, [1.0])
    empty = ring_lookup(state, 0, 7.0)  # nothing recorded in the top ring? v=7 -> ring 1
    assert len(empty.points) == 1  # 0.4 sits in ring [5, inf)


def test_mh_step_flat_always_accepts():
    dens = flat_density(CIRCLE)
    rng = RngStream(seed=5, replica=0, level=0)
    x = 0.2
    for t in range(200):
        x, kind = mh_step(x, 0.1, dens, rng, t)
        assert kind == MH_ACCEPT
        assert 0.0 <= x < 1.0


def test_mh_step_square_tooth_acceptance_rate():
    # uphill proposals (V: 0 -> H) accept with probability e^{-H}
    fam = square_family(m=2, h=2.0, k=1)
    dens = fam.density(0)
    rng = RngStream(seed=12, replica=0, level=0)
    ups, accepted = 0, 0
    x = 0.125
    for t in range(40000):
        y, kind = mh_step(x, 0.2, dens, rng, t)
        went_up = dens.pdf_fast(y if kind == MH_ACCEPT else x) < dens.pdf_fast(x)
        if kind == MH_ACCEPT and went_up:
            ups += 1
            accepted += 1
            x = 0.125  # reset to the well
        elif kind == MH_REJECT:
            prop = (x + 0.2 * (2 * rng.triple(t)[1] - 1)) % 1.0
            if dens.pdf_fast(prop) < dens.pdf_fast(x):
                ups += 1
    rate = accepted / ups
    assert abs(rate - np.exp(-2.0)) < 0.02


def test_pt_step_swap_probability():
    # V(x0)=0, V(x1)=H: the swap attempt always succeeds (exponent >= 0)
    pot = SquareTooth(4, 5.0)
    fam = TemperedFamily(pot, ((1.0, 0.0), (0.5, 0.0)))
    rng0 = RngStream(3, 0, 0)
    rng1 = RngStream(3, 0, 1)
    swaps = 0
    n_attempts = 0
    # downhill swap (cold chain in the well, hot chain on the barrier)
    for t in range(500):
        y0, y1, kind = pt_step(0.05, 0.2, 0.9, (1.0, 0.5), pot, 0.05, rng0, rng1, t, fam)
        if kind == SWAP:
            swaps += 1
            n_attempts += 1
            assert (y0, y1) == (0.2, 0.05)
        elif kind == HOLD:
            n_attempts += 1
    # exponent is -(0-5)(0.5) = 2.5 > 0: every attempted swap is accepted
    assert n_attempts > 0 and swaps == n_attempts
    # uphill swap accepts with probability e^{-(5-0)(1-0.5)} = e^{-2.5}
    acc, att = 0, 0
    for t in range(500, 40000):
        y0, y1, kind = pt_step(0.2, 0.05, 0.9, (1.0, 0.5), pot, 0.05, rng0, rng1, t, fam)
        if kind == SWAP:
            acc += 1
            att += 1
        elif kind == HOLD:
            att += 1
    assert abs(acc / att - np.exp(-2.5)) < 0.02


def test_uniform_example_marginals():
    # both levels of the flat independence-proposal chain stay exactly uniform
    cfg = uniform46_config(p_ee=0.1, t_end=20000, t_b=100)
    tr = run_multilevel(cfg, seed=21)
    dom = interval_domain(-0.5, 0.5)
    for i in range(2):
        pts = tr.points(i)
        assert pts.min() >= -0.5 and pts.max() <= 0.5
        u = pts + 0.5
        ks = stats.kstest(u, "uniform")
        assert ks.pvalue > 1e-4
        mu = EmpiricalMeasure.from_points(pts, dom)
        assert w1_density_measure(flat_density(dom), mu) < 0.01
    # level-1 moves are independence MH on a flat target: always accepted
    kinds = set(tr.kinds(1)[1:])
    assert kinds == {MH_ACCEPT}


def test_limiting_sampler_flat_full_rings():
    base = uniform46_config(p_ee=0.3, t_end=5000, t_b=50)
    cfg = SamplerConfig(
        "LIMITING", base.family, base.rings, base.c, base.p_ee,
        base.levels, base.t_end, base.proposal,
    )
    tr = run_multilevel(cfg, seed=8)
    kinds = tr.kinds(0)[1:]
    n_jump = sum(k == EE_ACCEPT for k in kinds)
    # jump moves fire at rate p_ee and, on a flat target, always accept
    assert abs(n_jump / len(kinds) - 0.3) < 0.03
    assert EE_SKIP not in kinds
    u = tr.points(0) + 0.5
    assert stats.kstest(u, "uniform").pvalue > 1e-4


def test_trace_csv_schema(tmp_path):
    cfg = uniform46_config(t_end=30, t_b=5)
    tr = run_multilevel(cfg, seed=2)
    path = tmp_path / "trace.csv"
    tr.to_csv(path, replica=3)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["replica", "level", "t", "x", "move_kind"]
    n_expected = (30 - 5 + 1) + (30 + 1)
    assert len(rows) == 1 + n_expected
    for rep, level, t, x, kind in rows[1:]:
        assert rep == "3"
        assert level in ("0", "1")
        assert -0.5 <= float(x) <= 0.5
        assert kind in ("MH-accept", "MH-reject", "EE-accept", "EE-reject",
                        "EE-skip", "swap", "hold")
        int(t)


def test_mixture_history_init_uses_history_atom():
    # with p_ee close to 1 the init draw lands on a recorded history point
    dom = interval_domain(-0.5, 0.5)
    fam = TemperedFamily(Flat(), ((1.0, 0.0), (0.5, 0.0)), dom)
    cfg = SamplerConfig(
        "EE", fam, Full(), 0.1, 0.99,
        (LevelConfig(50, InitSpec("mixture-history")), LevelConfig(0, InitSpec("uniform"))),
        60, proposal="independent",
    )
    tr = run_multilevel(cfg, seed=4)
    x0 = tr.levels[0][0].x
    hist = [e.x for e in tr.levels[1] if e.t <= 50]
    assert len(hist) == 51
    assert x0 in hist

"""Oriented-percolation frontier, exact small-grid survival, threshold scan."""

import io
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

import oracles
from seedbankmeta import core, occupancy, percolation as perc
from seedbankmeta._kernels import NUMBA_AVAILABLE, implementations
from seedbankmeta.core import validate_params
from seedbankmeta.errors import (
    BudgetExceededError,
    RangeError,
    ScanExhaustedError,
)
from seedbankmeta.percolation import (
    PercConfig,
    PercFrontier,
    ScanTrace,
    desk_config,
    exact_survival_small,
    open_row,
    pcrit_scan,
    rbar,
    survival_frequency_small,
)


def _sentinel(config, value):
    return -(config.half_width + 1) if value is None else value


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_config_geometry():
    cfg = PercConfig(H=2, half_width=5, horizon=7)
    assert cfg.width == 11
    assert cfg.xs()[0] == -5 and cfg.xs()[-1] == 5
    assert len(cfg.xs()) == cfg.width


def test_desk_config_defaults_and_overrides():
    cfg = desk_config(1, seed=9)
    assert cfg.half_width == perc.DESK_HALF_WIDTH
    assert cfg.horizon == perc.DESK_HORIZON
    assert cfg.seed == 9
    small = desk_config(1, seed=9, half_width=40)
    assert small.half_width == 40 and small.horizon == perc.DESK_HORIZON


@pytest.mark.parametrize("kwargs", [
    dict(H=-1),
    dict(H=0.5),
    dict(H=0, p=1.5),
    dict(H=0, p=-0.1),
    dict(H=0, half_width=0),
    dict(H=0, horizon=0),
    dict(H=0, p_step=0.0),
    dict(H=0, p_start=1.2),
    dict(H=0, p_step=0.5, p_start=0.3),
])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(RangeError):
        PercConfig(**kwargs)


def test_open_row_deterministic_and_unbiased():
    cfg = PercConfig(H=0, p=0.35, half_width=50_000, horizon=10, seed=123)
    row = open_row(cfg, 4)
    assert np.array_equal(row, open_row(cfg, 4))
    assert not np.array_equal(row, open_row(cfg, 5))
    assert not np.array_equal(row, open_row(cfg, 4, rep=1))
    frac = row.mean()
    sigma = np.sqrt(0.35 * 0.65 / cfg.width)
    assert abs(frac - 0.65) <= 3 * sigma


def test_open_set_shrinks_with_p():
    cfg = PercConfig(H=0, p=0.3, half_width=2000, horizon=5, seed=77)
    lo = open_row(cfg, 3)
    hi = open_row(replace(cfg, p=0.7), 3)
    assert not (hi & ~lo).any()
    assert lo.sum() > hi.sum()


# ---------------------------------------------------------------------------
# frontier evolution
# ---------------------------------------------------------------------------


def test_all_open_frontier_advances_at_unit_speed():
    for X, T, H in [(10, 6, 0), (10, 6, 2), (5, 30, 1), (30, 12, 3)]:
        cfg = PercConfig(H=H, p=0.0, half_width=X, horizon=T, seed=3)
        assert rbar(cfg) == min(T + H, X - 1)


def test_all_closed_frontier_dies():
    cfg = PercConfig(H=1, p=1.0, half_width=8, horizon=10, seed=3)
    assert rbar(cfg) is None


def test_rbar_never_beats_unit_speed():
    rng = np.random.default_rng(31)
    for _ in range(10):
        cfg = PercConfig(H=int(rng.integers(0, 4)),
                         p=float(rng.uniform(0.0, 0.6)),
                         half_width=int(rng.integers(5, 40)),
                         horizon=int(rng.integers(5, 40)),
                         seed=int(rng.integers(0, 2**31)))
        r = rbar(cfg)
        if r is not None:
            assert r <= min(cfg.horizon + cfg.H, cfg.half_width - 1)


def test_rbar_monotone_in_p_with_shared_draws():
    cfg = PercConfig(H=1, p=0.5, half_width=60, horizon=60, seed=9)
    vals = [_sentinel(cfg, rbar(replace(cfg, p=float(p))))
            for p in np.linspace(0.1, 0.9, 9)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[0] > vals[-1]


def test_rbar_monotone_in_memory_depth():
    # same seed, same open sites: deeper memory reaches a superset
    for seed in (1, 2, 3):
        vals = [_sentinel(PercConfig(H=0, half_width=80, horizon=80),
                          rbar(PercConfig(H=H, p=0.55, half_width=80,
                                          horizon=80, seed=seed)))
                for H in range(4)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_frontier_rejects_bad_injected_row():
    cfg = PercConfig(H=0, half_width=4, horizon=3)
    frontier = PercFrontier(cfg)
    with pytest.raises(RangeError):
        frontier.step(opened=np.ones(5, dtype=bool))


def test_frontier_base_translation():
    # shifting the base and the openness together shifts the rows, away
    # from the contamination cone of the fixed border columns
    T, d = 8, 3
    X = T + d + 4
    cfg = PercConfig(H=1, p=0.4, half_width=X, horizon=T, seed=42)
    margin = T + d + 2
    fixed = PercFrontier(cfg)
    shifted = PercFrontier(cfg, base_shift=d)
    for t in range(T + 1):
        opened = open_row(cfg, t)
        row = fixed.step(opened)
        row_shifted = shifted.step(np.roll(opened, d))
        want = np.roll(row, d)
        assert np.array_equal(row_shifted[margin:-margin],
                              want[margin:-margin])


def test_rbar_kernel_matches_row_by_row_driver():
    def rbar_python(cfg, rep):
        frontier = PercFrontier(cfg, rep=rep)
        best = None
        for t in range(cfg.horizon + cfg.H + 1):
            frontier.step()
            if t >= cfg.horizon:
                r = frontier.rightmost()
                if r is not None and (best is None or r > best):
                    best = r
        return best

    impl = implementations("active")
    rng = np.random.default_rng(7)
    for _ in range(6):
        cfg = PercConfig(H=int(rng.integers(0, 4)),
                         p=float(rng.uniform(0.2, 0.8)),
                         half_width=int(rng.integers(8, 30)),
                         horizon=int(rng.integers(10, 40)),
                         seed=int(rng.integers(0, 2**31)))
        rep = int(rng.integers(0, 3))
        want = _sentinel(cfg, rbar_python(cfg, rep))
        got = impl["perc_rbar"](cfg.seed, cfg.p, cfg.half_width,
                                cfg.horizon, cfg.H, rep)
        assert int(got) == want


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")
def test_rbar_backends_agree():
    nb = implementations("numba")["perc_rbar"]
    npy = implementations("numpy")["perc_rbar"]
    rng = np.random.default_rng(15)
    for _ in range(8):
        args = (int(rng.integers(0, 2**31)), float(rng.uniform(0.1, 0.9)),
                int(rng.integers(5, 50)), int(rng.integers(5, 50)),
                int(rng.integers(0, 4)), int(rng.integers(0, 3)))
        assert int(nb(*args)) == int(npy(*args))


def test_rbar_golden_values():
    # frozen realizations on a 601 x 301 grid; guards the draw addressing
    grid = dict(half_width=300, horizon=300, seed=11)
    assert rbar(PercConfig(H=0, p=0.3, **grid)) == 172
    assert rbar(PercConfig(H=1, p=0.3, **grid)) == 218
    assert rbar(PercConfig(H=2, p=0.3, **grid)) == 219
    assert rbar(PercConfig(H=3, p=0.3, **grid)) == 219
    assert rbar(PercConfig(H=1, p=0.55, **grid)) == 106


# ---------------------------------------------------------------------------
# frontier == bounded occupancy bound driven by complemented openness
# ---------------------------------------------------------------------------
#
# Mapping: kill exactly the closed sites (extinction bits = NOT open),
# force the border overrides into the openness itself, pin the base
# half-line occupied at age 0 through the first H+1 rows.  Both processes
# then satisfy row_t = open_t AND dilate(union of rows t-H-1..t-1), so the
# frontier row must equal (reachable AND open) exactly, clipped grid
# against clipped grid.


def _repinned(bound, base):
    occ = bound.occ.copy()
    age = bound.age.copy()
    occ[base] = True
    age[base] = 0
    return occupancy.OccupancyState(generation=bound.generation,
                                    i_min=bound.i_min, occ=occ, age=age,
                                    age_cap=bound.age_cap)


def test_frontier_equals_bounded_occupancy_bound():
    rng = np.random.default_rng(20260814)
    for _ in range(100):
        X = int(rng.integers(2, 6))
        T = int(rng.integers(4, 11))
        H = int(rng.integers(0, 3))
        p = float(rng.uniform(0.1, 0.9))
        seed = int(rng.integers(0, 2**31))
        cfg = PercConfig(H=H, p=p, half_width=X, horizon=T, seed=seed)
        params = validate_params({"M": 4, "H": H, "g": 0.5, "c": 0.1,
                                  "p": p, "k": 2})
        base = cfg.xs() <= 0

        frontier = PercFrontier(cfg)
        bound = occupancy.OccupancyState(
            generation=0, i_min=-X, occ=base.copy(),
            age=np.zeros(cfg.width, np.int64), age_cap=H + 1)
        for t in range(T + 1):
            opened = open_row(cfg, t)
            row = frontier.step(opened)
            eff = opened.copy()
            eff[0] = True
            eff[-1] = False
            if t <= H:
                eff |= base
            assert np.array_equal(row, bound.reachable & eff)
            field = core.ExtinctionField(generation=t + 1, i_min=-X,
                                         bits=~eff)
            bound = occupancy.boa_step(bound, params, field, grow=False)
            if bound.generation <= H:
                bound = _repinned(bound, base)


# ---------------------------------------------------------------------------
# exact small-grid survival
# ---------------------------------------------------------------------------


def test_exact_survival_frozen_rationals():
    assert exact_survival_small(0, Fraction(1, 2), 3, 3) == Fraction(315, 512)
    assert exact_survival_small(1, Fraction(1, 2), 3, 3) == Fraction(341, 512)
    assert exact_survival_small(1, Fraction(1, 3), 2, 4) == Fraction(4096, 6561)
    assert exact_survival_small(0, Fraction(2, 7), 2, 3) == Fraction(91125, 117649)
    assert exact_survival_small(2, Fraction(3, 5), 3, 2) == Fraction(9604, 15625)


@pytest.mark.parametrize("H,p,width,horizon", [
    (0, Fraction(1, 2), 3, 3),
    (1, Fraction(1, 2), 3, 3),
    (1, Fraction(1, 3), 2, 4),
    (0, Fraction(2, 7), 2, 3),
    (2, Fraction(3, 5), 3, 2),
])
def test_exact_survival_matches_bruteforce(H, p, width, horizon):
    assert exact_survival_small(H, p, width, horizon) == \
        oracles.survival_bruteforce(H, p, width, horizon)


def test_exact_survival_edge_cases():
    assert exact_survival_small(0, 0, 3, 5) == 1
    assert exact_survival_small(2, 1, 3, 5) == 0
    assert exact_survival_small(1, Fraction(2, 3), 4, 0) == 1
    # width 1: survive iff the single column stays open every row
    assert exact_survival_small(0, Fraction(1, 4), 1, 3) == Fraction(3, 4)**3


def test_exact_survival_budget_guard():
    with pytest.raises(BudgetExceededError):
        exact_survival_small(0, Fraction(1, 2), 4, 8)
    with pytest.raises(RangeError):
        exact_survival_small(0, Fraction(1, 2), 0, 3)
    with pytest.raises(RangeError):
        exact_survival_small(0, Fraction(3, 2), 3, 3)


def test_survival_frequency_matches_exact_law():
    exact = float(Fraction(315, 512))
    n = 200_000
    freq = survival_frequency_small(0, 0.5, 3, 3, seed=17, replicates=n)
    sigma = np.sqrt(exact * (1 - exact) / n)
    assert abs(freq - exact) <= 3 * sigma


# ---------------------------------------------------------------------------
# critical-threshold scan
# ---------------------------------------------------------------------------


def test_scan_trace_shape_and_acceptance():
    cfg = PercConfig(H=1, p=0.5, half_width=120, horizon=120, seed=4)
    trace = pcrit_scan(cfg)
    ps = [row[0] for row in trace.rows]
    assert all(a > b for a, b in zip(ps, ps[1:]))
    assert ps[0] == cfg.p_start
    assert all(not row[3] for row in trace.rows[:-1])
    assert trace.rows[-1][3]
    assert trace.estimate == ps[-1]
    assert 0.0 < trace.estimate < 1.0


def test_scan_jobs_invariant():
    cfg = PercConfig(H=1, p=0.5, half_width=120, horizon=120, seed=4)
    ref = pcrit_scan(cfg, jobs=1)
    par = pcrit_scan(cfg, jobs=3)
    assert ref.estimate == par.estimate
    assert ref.rows == par.rows


def test_scan_estimate_monotone_in_memory_depth():
    # pointwise superset of reachable sites at every probe forces the
    # accepted p upward as the memory depth grows, realization by
    # realization, not merely on average
    estimates = [pcrit_scan(PercConfig(H=H, half_width=150, horizon=150,
                                       seed=5)).estimate
                 for H in range(4)]
    assert all(a <= b for a, b in zip(estimates, estimates[1:]))
    assert estimates[0] < estimates[-1]


def test_scan_ladder_reaches_zero():
    # threshold satisfiable only by a full-speed frontier; with a coarse
    # step the intermediate probes cannot reach it and the ladder must
    # bottom out at p = 0, where every site is open
    cfg = PercConfig(H=0, p=0.5, half_width=70, horizon=60, seed=8,
                     accept_threshold=1.0 - 1.0 / 120,
                     p_start=0.9, p_step=0.3)
    trace = pcrit_scan(cfg)
    assert len(trace.rows) == 4
    assert trace.estimate < 1e-12
    assert trace.rows[-1][1] == cfg.horizon


def test_scan_exhaustion():
    cfg = PercConfig(H=0, p=0.5, half_width=30, horizon=40, seed=8,
                     accept_threshold=2.0)
    with pytest.raises(ScanExhaustedError):
        pcrit_scan(cfg)


def test_scan_trace_csv_layout():
    cfg = PercConfig(H=0, p=0.5, half_width=70, horizon=60, seed=8,
                     accept_threshold=1.0 - 1.0 / 120,
                     p_start=0.9, p_step=0.3)
    trace = pcrit_scan(cfg)
    buf = io.StringIO()
    trace.write_csv(buf, fingerprint="deadbeef0123")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# config_fingerprint=deadbeef0123"
    assert lines[1] == "H,p,rbar,ratio,accepted"
    assert len(lines) == 2 + len(trace.rows)
    assert lines[2].startswith("0,0.9,")
    assert lines[-1].endswith(",1")
    assert all(line.endswith(",0") for line in lines[2:-1])


def test_scan_trace_csv_blank_rbar_for_dead_probe():
    trace = ScanTrace(H=2, estimate=0.5,
                      rows=[(0.6, None, -1.2, False), (0.5, 10, 0.1, True)],
                      config=PercConfig(H=2, half_width=20, horizon=10))
    buf = io.StringIO()
    trace.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "H,p,rbar,ratio,accepted"
    assert lines[1] == "2,0.6,,-1.2,0"
    assert lines[2] == "2,0.5,10,0.1,1"

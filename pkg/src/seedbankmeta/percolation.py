"""Oriented site percolation on the space-time strip [-X, X] x [0, T+H].

A site (x, t) is open iff its keyed uniform is >= p, so the open set shrinks
as p grows while reusing the same draws (monotone coupling across p).  A
site's reachability bit is set iff it is boundary-open (the left border
column x = -X always passes, the right border x = +X never does) and some
bit is set among the previous H+1 rows at spatial offsets {-1, 0, +1}; rows
0..H are additionally seeded with the base half-line x <= 0.

The edge statistic rbar is the rightmost set bit over rows T..T+H
(excluding the artificial left border column).  Scanning p downward from
p_start and accepting the first p with rbar/T above a small negative
threshold estimates the critical extinction probability: above it the
frontier retreats linearly, below it the frontier advances.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import core
from ._kernels import IMPL
from .errors import BudgetExceededError, RangeError, ScanExhaustedError

FULL_HALF_WIDTH = 10500
FULL_HORIZON = 10000
DESK_HALF_WIDTH = 2000
DESK_HORIZON = 2000


@dataclass(frozen=True)
class PercConfig:
    H: int
    p: float = 0.5
    half_width: int = FULL_HALF_WIDTH
    horizon: int = FULL_HORIZON
    accept_threshold: float = -0.005
    p_start: float = 0.99
    p_step: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.H < 0 or self.H != int(self.H):
            raise RangeError(f"parameter 'H': must be an integer >= 0, "
                             f"got {self.H}")
        if not 0.0 <= self.p <= 1.0:
            raise RangeError(f"parameter 'p': must lie in [0, 1], got {self.p}")
        if self.half_width < 1:
            raise RangeError(f"parameter 'half_width': must be >= 1, "
                             f"got {self.half_width}")
        if self.horizon < 1:
            raise RangeError(f"parameter 'horizon': must be >= 1, "
                             f"got {self.horizon}")
        if not 0.0 < self.p_step < self.p_start <= 1.0:
            raise RangeError(
                f"parameters 'p_step'/'p_start': need 0 < p_step < p_start "
                f"<= 1, got {self.p_step}, {self.p_start}")

    @property
    def width(self) -> int:
        return 2 * self.half_width + 1

    def xs(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)


def desk_config(H, seed, **overrides) -> PercConfig:
    """Desk-scale defaults; the full-scale grid is the PercConfig default."""
    overrides.setdefault("half_width", DESK_HALF_WIDTH)
    overrides.setdefault("horizon", DESK_HORIZON)
    return PercConfig(H=H, seed=seed, **overrides)


def open_row(config: PercConfig, t, rep=0) -> np.ndarray:
    """Boolean openness of row t over [-X, X] (before boundary overrides)."""
    xs = config.xs()
    state = core.key_state(config.seed, t, xs, core.ROLE_PERC_ROW, rep)
    return core.unit_draws(state, 0) >= config.p


class PercFrontier:
    """Reference frontier evolution, one row at a time.

    Slow but transparent; the production path is the rbar kernel, which the
    tests pin row-for-row against this class.  `opened` rows can be injected
    to drive hand-built grids, and `base_shift` moves the base half-line to
    x <= base_shift (interior translation experiments).
    """

    def __init__(self, config: PercConfig, rep=0, base_shift=0):
        self.config = config
        self.rep = rep
        self.base_shift = base_shift
        self.t = 0
        self._hist = deque(maxlen=config.H + 1)

    def step(self, opened=None) -> np.ndarray:
        cfg = self.config
        if opened is None:
            opened = open_row(cfg, self.t, self.rep)
        else:
            opened = np.asarray(opened, dtype=bool)
            if opened.shape != (cfg.width,):
                raise RangeError(f"parameter 'opened': expected shape "
                                 f"({cfg.width},), got {opened.shape}")
        passable = opened.copy()
        passable[0] = True
        passable[-1] = False
        if self._hist:
            cum = np.any(self._hist, axis=0)
            pred = cum.copy()
            pred[:-1] |= cum[1:]
            pred[1:] |= cum[:-1]
        else:
            pred = np.zeros(cfg.width, dtype=bool)
        row = passable & pred
        if self.t <= cfg.H:
            row |= cfg.xs() <= self.base_shift
        self._hist.append(row)
        self.t += 1
        return row

    @property
    def row(self) -> np.ndarray:
        return self._hist[-1]

    def rightmost(self):
        """x of the rightmost set bit, ignoring the left border column."""
        idx = np.nonzero(self.row[1:])[0]
        if len(idx) == 0:
            return None
        return int(idx[-1]) + 1 - self.config.half_width


def rbar(config: PercConfig, rep=0):
    """Rightmost reachable x over rows T..T+H, or None when none is set."""
    value = IMPL["perc_rbar"](config.seed, config.p, config.half_width,
                              config.horizon, config.H, rep)
    if value < -config.half_width:
        return None
    return value


@dataclass(frozen=True)
class ScanTrace:
    H: int
    estimate: float
    rows: list          # (p, rbar or None, ratio, accepted)
    config: PercConfig

    def write_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["H", "p", "rbar", "ratio", "accepted"])
        for p, r, ratio, accepted in self.rows:
            writer.writerow([self.H, f"{p:.10g}",
                             "" if r is None else r,
                             f"{ratio:.10g}", int(accepted)])


def _probe(config: PercConfig, p, rep):
    r = rbar(replace(config, p=p), rep=rep)
    sentinel = -(config.half_width + 1)
    ratio = (sentinel if r is None else r) / config.horizon
    return r, ratio


def pcrit_scan(config: PercConfig, rep=0, jobs=1) -> ScanTrace:
    """Scan p downward from p_start; accept the first ratio above threshold.

    One realization per probe.  All probes share the same uniforms, so the
    accepted p is non-increasing in p by construction and non-decreasing in
    H across scans with the same seed.  `jobs` probes run speculatively in
    parallel; the trace and estimate are identical for any jobs value.
    """
    n_probes = int(config.p_start / config.p_step + 1e-9) + 2
    ps = [config.p_start - i * config.p_step for i in range(n_probes)]
    ps = [p for p in ps if p > -1e-12]

    rows = []
    estimate = None
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for start in range(0, len(ps), jobs):
                chunk = ps[start:start + jobs]
                results = list(pool.map(
                    lambda p: _probe(config, p, rep), chunk))
                for p, (r, ratio) in zip(chunk, results):
                    accepted = ratio > config.accept_threshold
                    rows.append((p, r, ratio, accepted))
                    if accepted:
                        estimate = p
                        break
                if estimate is not None:
                    break
    else:
        for p in ps:
            r, ratio = _probe(config, p, rep)
            accepted = ratio > config.accept_threshold
            rows.append((p, r, ratio, accepted))
            if accepted:
                estimate = p
                break
    if estimate is None:
        raise ScanExhaustedError(
            f"no p in [0, {config.p_start}] met the acceptance threshold "
            f"{config.accept_threshold}")
    return ScanTrace(H=config.H, estimate=estimate, rows=rows, config=config)


# ---------------------------------------------------------------------------
# Exact small-grid survival oracle
# ---------------------------------------------------------------------------
# Bounded strip of `width` columns: row 0 is fully reachable (the base), row
# t >= 1 site x is reachable iff it is open and some site in columns
# {x-1, x, x+1} is reachable among rows t-H-1..t-1.  Survival is "every row
# 0..horizon has a reachable site".  The distribution over open
# configurations is summed exactly by propagating rational weights over
# reachable-row-mask histories; identical in value to enumerating all
# 2^(width*horizon) grids, which the budget guard keys on.


def _dilate_mask(mask, width):
    full = (1 << width) - 1
    return (mask | (mask << 1) | (mask >> 1)) & full


def exact_survival_small(H, p, width, horizon) -> Fraction:
    """Exact P(every row 0..horizon has a reachable site), as a Fraction.

    `p` is taken exactly (floats convert via their binary value).  Budget
    guard: width*horizon random bits, at most 30.
    """
    if width < 1 or horizon < 0:
        raise RangeError("width must be >= 1 and horizon >= 0")
    if width * horizon > 30:
        raise BudgetExceededError(
            f"enumeration over 2^{width * horizon} grids exceeds the "
            f"2^30 budget")
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise RangeError(f"parameter 'p': must lie in [0, 1], got {p}")
    q = 1 - p
    full = (1 << width) - 1

    # weight of an open-configuration row by its popcount
    n_open_weight = [q ** n * p ** (width - n) for n in range(width + 1)]
    span = H + 1
    states = {(full,): Fraction(1)}
    for _ in range(horizon):
        new_states = {}
        for hist, weight in states.items():
            cum = 0
            for row in hist:
                cum |= row
            pred = _dilate_mask(cum, width)
            for bits in range(full + 1):
                row = bits & pred
                if row == 0:
                    continue
                w = weight * n_open_weight[bin(bits).count("1")]
                nh = (hist + (row,))[-span:]
                new_states[nh] = new_states.get(nh, Fraction(0)) + w
        states = new_states
    return sum(states.values(), Fraction(0))


def survival_frequency_small(H, p, width, horizon, seed, replicates,
                             batch=200_000) -> float:
    """Monte Carlo estimate of the exact_survival_small event.

    Shares the reachability recurrence; openness draws are keyed by
    (seed, t, x, percolation role, replicate).
    """
    survived = 0
    xs = np.arange(width, dtype=np.int64)
    for start in range(0, replicates, batch):
        n = min(batch, replicates - start)
        reps = np.arange(start, start + n, dtype=np.int64)
        alive = np.ones(n, dtype=bool)
        hist = deque(maxlen=H + 1)
        hist.append(np.ones((n, width), dtype=bool))
        for t in range(1, horizon + 1):
            st = core.key_state(seed, t, xs[None, :], core.ROLE_PERC_ROW,
                                reps[:, None])
            opened = core.unit_draws(st, 0) >= p
            cum = np.any(hist, axis=0)
            pred = cum.copy()
            pred[:, :-1] |= cum[:, 1:]
            pred[:, 1:] |= cum[:, :-1]
            row = opened & pred
            alive &= row.any(axis=1)
            hist.append(row)
        survived += int(alive.sum())
    return survived / replicates

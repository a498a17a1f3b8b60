"""Patch-occupancy projections of the seed-bank process and their coupling.

Two SPOM-level views share one extinction history:

* the occupancy process, derived from a compartment-level trajectory: per
  patch, whether any type-1 seed exists and the age of the youngest one
  (a saturating since-last-occupied counter when none exists);
* the upper-bound process, a genuine Markov chain on (O, h): every patch
  adjacent to a non-extinct patch holding viable seeds (h <= H) is refilled
  with O=1, h=0, everything else ages.

coupled_run drives both in lockstep and enforces the domination invariant:
occupancy never exceeds the bound and its ages never run ahead of it.  A
violation is an implementation bug, never a model outcome, and raises.

The deviation scan classifies how the occupancy process escapes the bound:
divergence (the processes disagree), parent_miss (some neighborhood plant
was never drawn as a parent candidate by some refill), germination_miss
(the youngest cohort holds viable seeds but none germinates), and
census_escape (the youngest cohort size leaves its concentration window).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import core, wfsb
from ._kernels import IMPL
from .core import ExtinctionField, Params, Window
from .errors import (
    CouplingViolationError,
    MissingPreviousError,
    OccupancySpecError,
    RangeError,
    WindowMismatchError,
)

EVENT_DIVERGENCE = "divergence"
EVENT_PARENT_MISS = "parent_miss"
EVENT_GERMINATION_MISS = "germination_miss"
EVENT_CENSUS_ESCAPE = "census_escape"


@dataclass(frozen=True)
class OccupancyState:
    """Per-patch (occupied, youngest-age) view at one generation.

    Serves both the derived occupancy process and the upper-bound process;
    ages saturate at age_cap = H + 1, past which seeds are inert.
    """

    generation: int
    i_min: int
    occ: np.ndarray      # (patches,) bool
    age: np.ndarray      # (patches,) int64 in [0, age_cap]
    age_cap: int
    torus: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "occ", np.asarray(self.occ, dtype=bool))
        object.__setattr__(self, "age", np.asarray(self.age, dtype=np.int64))
        if self.occ.shape != self.age.shape:
            raise ValueError("occ and age shapes differ")
        self.occ.setflags(write=False)
        self.age.setflags(write=False)

    @property
    def n_patches(self) -> int:
        return len(self.occ)

    @property
    def window(self) -> Window:
        return Window(self.i_min, self.i_min + self.n_patches - 1)

    def patches(self) -> np.ndarray:
        return self.window.patches()

    @property
    def reachable(self) -> np.ndarray:
        """Occupied with seeds still young enough to germinate viably."""
        return self.occ & (self.age <= self.age_cap - 1)


def derive_occupancy(state: wfsb.SeedBankState,
                     previous: OccupancyState | None = None) -> OccupancyState:
    """Project a compartment-level state to per-patch (O, h).

    Occupied patches get h = youngest type-1 age.  Unoccupied patches
    continue a saturating counter from `previous` (starting at 0 at
    generation 0); patches new to the window carry the never-occupied
    counter value min(generation, age_cap).
    """
    occ = (state.xi == 1).any(axis=1)
    cap = state.age_cap
    gen = state.generation
    big = np.int64(np.iinfo(np.int64).max)
    h_occ = np.where(state.xi == 1, state.age, big).min(axis=1)

    if gen == 0:
        h_unocc = np.zeros(state.n_patches, np.int64)
    else:
        if previous is None:
            raise MissingPreviousError(
                f"deriving occupancy at generation {gen} needs the "
                f"generation {gen - 1} occupancy state")
        if previous.generation != gen - 1:
            raise MissingPreviousError(
                f"previous occupancy is at generation {previous.generation}, "
                f"expected {gen - 1}")
        prev = np.full(state.n_patches, min(gen - 1, cap), np.int64)
        if state.torus is not None:
            if previous.n_patches != state.n_patches:
                raise MissingPreviousError("torus occupancy width changed")
            prev[:] = previous.age
        else:
            lo = max(state.i_min, previous.i_min)
            hi = min(state.window.i_max, previous.window.i_max)
            if hi >= lo:
                prev[lo - state.i_min:hi - state.i_min + 1] = \
                    previous.age[lo - previous.i_min:hi - previous.i_min + 1]
        h_unocc = np.minimum(prev + 1, cap)

    h = np.where(occ, h_occ, h_unocc)
    return OccupancyState(generation=gen, i_min=state.i_min, occ=occ, age=h,
                          age_cap=cap, torus=state.torus)


def boa_from_occupancy(occ: OccupancyState) -> OccupancyState:
    """Initial upper-bound state: equal to the occupancy state."""
    return occ


def _aligned_bits(ext: ExtinctionField, i_min, n, torus) -> np.ndarray:
    rows = np.arange(n) + (i_min - ext.i_min)
    bits = np.asarray(ext.bits, dtype=bool)
    if torus is not None:
        return bits[rows % len(bits)]
    return bits[rows]


def boa_step(state: OccupancyState, params: Params, ext: ExtinctionField,
             grow=True) -> OccupancyState:
    """One upper-bound transition driven solely by the extinction field.

    Sources are reachable non-extinct patches; each source refills itself
    and both neighbors (O=1, h=0, contributions OR-ed).  Everything else
    keeps O and saturating-increments h.  On the line the window grows one
    patch per side when `grow`; grow=False keeps the window fixed with the
    dilation clipped at its edges (bounded-grid semantics).
    """
    if ext.generation != state.generation + 1:
        raise WindowMismatchError(
            f"extinction field generation {ext.generation} != "
            f"state generation + 1 = {state.generation + 1}")
    cap = params.age_cap
    torus = state.torus
    if torus is not None:
        if ext.i_min != 0 or len(ext.bits) != torus:
            raise WindowMismatchError("extinction field must cover the torus")
    else:
        needed = state.window.expand(1) if grow else state.window
        if not ext.window.covers(needed):
            raise WindowMismatchError(
                f"extinction field window {ext.window} does not cover "
                f"{needed}")

    bits = _aligned_bits(ext, state.i_min, state.n_patches, torus)
    sources = state.reachable & ~bits

    if torus is not None:
        targets = sources | np.roll(sources, 1) | np.roll(sources, -1)
        occ_prev, age_prev, i_min = state.occ, state.age, state.i_min
    elif grow:
        n = state.n_patches
        targets = np.zeros(n + 2, dtype=bool)
        targets[:-2] |= sources
        targets[1:-1] |= sources
        targets[2:] |= sources
        occ_prev = np.concatenate(([False], state.occ, [False]))
        fresh = np.int64(min(state.generation, cap))
        age_prev = np.concatenate(([fresh], state.age, [fresh]))
        i_min = state.i_min - 1
    else:
        targets = sources.copy()
        targets[:-1] |= sources[1:]
        targets[1:] |= sources[:-1]
        occ_prev, age_prev, i_min = state.occ, state.age, state.i_min

    occ_new = occ_prev | targets
    age_new = np.where(targets, 0, np.minimum(age_prev + 1, cap))
    return OccupancyState(generation=state.generation + 1, i_min=i_min,
                          occ=occ_new, age=age_new, age_cap=cap, torus=torus)


# ---------------------------------------------------------------------------
# Concentration windows and analytic bounds
# ---------------------------------------------------------------------------


def window_slack(h) -> int:
    """Slack coefficient a_h = (3^h - 1) / 2 of the census windows."""
    if h < 0:
        raise RangeError(f"parameter 'h': must be >= 0, got {h}")
    return (3 ** int(h) - 1) // 2


def census_window(params: Params, h, epsilon) -> tuple[float, float]:
    """[gm((1-gm/M)^h - eps*a_h), gm((1-gm/M)^h + eps*a_h)], closed.

    The expected size of the age-h cohort of a patch is gm(1-gm/M)^h; the
    window widens with h because cohort fluctuations compound.
    """
    if not 0.0 < epsilon < 1.0:
        raise RangeError(
            f"parameter 'epsilon': must lie in (0, 1), got {epsilon}")
    gm = params.gm
    center = (1.0 - gm / params.M) ** int(h)
    slack = epsilon * window_slack(h)
    return gm * (center - slack), gm * (center + slack)


def default_epsilon(params: Params) -> float | None:
    """Half the largest census-window epsilon the concentration regime allows.

    The windows are informative only when (1-gm/M)^H > 1/gm; returns None
    when no positive epsilon exists (census_escape is then not evaluated).
    For H = 0 the h=0 window is degenerate and any epsilon works.
    """
    if params.H == 0:
        return 0.5
    gm = params.gm
    room = (1.0 - gm / params.M) ** params.H - 1.0 / gm
    if room <= 0.0:
        return None
    return 0.5 * room / window_slack(params.H)


def parent_miss_bound(params: Params) -> float:
    """Upper bound on P(some neighborhood plant is never drawn as a candidate).

    3*gm^2 * (1 - c*/gm)^k with c* = min(c, 1-2c): a union bound over the
    3gm plants and gm refills of a patch.  Vacuous (> 1) at small k;
    underflows to 0 in the k = M^alpha regime.
    """
    gm = params.gm
    return 3.0 * gm * gm * math.exp(params.k * math.log1p(-params.c_star / gm))


def age_census(state: wfsb.SeedBankState, patch=None) -> np.ndarray:
    """Compartment counts per age, binned 0..H+1 (saturated ages pooled at top).

    Returns the (H+2,) counts of one patch, or the (patches, H+2) matrix
    when `patch` is None.  Rows always sum to M.
    """
    counts = np.stack([(state.age == h).sum(axis=1)
                       for h in range(state.age_cap + 1)], axis=1)
    if patch is None:
        return counts
    return counts[state.patch_row(patch)]


# ---------------------------------------------------------------------------
# Profile-built initial conditions
# ---------------------------------------------------------------------------


def state_from_occupancy_profile(params: Params, occupied, ages, seed,
                                 germ_fractions=None,
                                 i_min=0) -> wfsb.SeedBankState:
    """Build a compartment state realizing a per-patch (O, h, g_i) profile.

    Occupied patches get exactly floor(g_i*M) type-1 seeds, all of age h_i
    (so the youngest type-1 cohort is pinned); every other compartment is a
    ghost whose age is drawn from the truncated geometric stationary profile
    (weight (1-gm/M)^a on a in [0, H+1]) so age censuses start near their
    concentration windows.  Empty patches must declare h_i = 0.
    """
    occupied = np.asarray(occupied, dtype=np.int64)
    ages = np.asarray(ages, dtype=np.int64)
    P = len(occupied)
    if ages.shape != occupied.shape:
        raise OccupancySpecError("occupied and ages lengths differ")
    if germ_fractions is None:
        germ_fractions = np.full(P, params.g)
    germ_fractions = np.asarray(germ_fractions, dtype=float)
    if germ_fractions.shape != occupied.shape:
        raise OccupancySpecError("germ_fractions length differs")

    if params.topology == core.TOPOLOGY_TORUS:
        if P != params.L or i_min != 0:
            raise OccupancySpecError(
                f"torus profile must cover patches 0..{params.L - 1}")
        torus = params.L
    else:
        torus = None

    if not np.isin(occupied, (0, 1)).all():
        raise OccupancySpecError("occupancy bits must be 0 or 1")
    empty = occupied == 0
    if (ages[empty] != 0).any():
        raise OccupancySpecError("empty patches must declare age 0")
    cap = params.age_cap
    if (ages < 0).any() or (ages > cap).any():
        raise OccupancySpecError(f"ages must lie in [0, {cap}]")
    full = ~empty
    bad_g = full & ((germ_fractions <= 0.0) | (germ_fractions > 1.0))
    if bad_g.any():
        raise OccupancySpecError("germ fractions of occupied patches must "
                                 "lie in (0, 1]")
    n1 = np.array([core.floor_gm(gf, params.M) for gf in germ_fractions])
    if (full & (n1 < 1)).any():
        raise OccupancySpecError(
            "occupied patch with floor(g_i*M) = 0 cannot hold a seed")

    M = params.M
    patches = i_min + np.arange(P, dtype=np.int64)
    st = core.key_state(seed, 0, patches[:, None],
                        core.ROLE_INIT_CONDITION,
                        np.arange(M, dtype=np.int64)[None, :])
    u = core.unit_draws(st, 0)
    weights = (1.0 - params.gm / M) ** np.arange(cap + 1)
    cum = np.cumsum(weights) / weights.sum()
    ghost_age = np.searchsorted(cum, u.ravel(), side="right").reshape(P, M)
    ghost_age = np.minimum(ghost_age, cap).astype(np.int64)

    xi = np.zeros((P, M), np.uint8)
    age = ghost_age
    cols = np.arange(M)[None, :]
    seeded = full[:, None] & (cols < n1[:, None])
    xi[seeded] = 1
    age = np.where(seeded, ages[:, None], age)
    return wfsb.SeedBankState(generation=0, i_min=i_min, xi=xi, age=age,
                              age_cap=cap, torus=torus)


# ---------------------------------------------------------------------------
# Coupled run and deviation scan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviationReport:
    """Per-generation firing sets of the four deviation events.

    Each list is indexed by generation (0..N); entries are arrays of patch
    indices.  parent_miss[n] and germination_miss[n] describe the n -> n+1
    transition, so their last entry is always empty.  census_escape needs a
    valid epsilon; when none exists the event is not evaluated and epsilon
    is None.  parent_miss is only populated by audited (perdraw) runs.
    """

    epsilon: float | None
    audited: bool
    divergence: list
    parent_miss: list
    germination_miss: list
    census_escape: list

    _EVENTS = (EVENT_DIVERGENCE, EVENT_PARENT_MISS, EVENT_GERMINATION_MISS,
               EVENT_CENSUS_ESCAPE)

    def sets(self, event) -> list:
        if event not in self._EVENTS:
            raise RangeError(f"parameter 'event': must be one of "
                             f"{self._EVENTS}, got {event!r}")
        return getattr(self, event)

    def counts(self, event) -> np.ndarray:
        return np.array([len(s) for s in self.sets(event)])

    def total(self, event) -> int:
        return int(self.counts(event).sum())

    @property
    def clean(self) -> bool:
        """True when the occupancy process never left the upper bound."""
        return self.total(EVENT_DIVERGENCE) == 0

    def iter_rows(self):
        for event in self._EVENTS:
            for gen, patches in enumerate(self.sets(event)):
                for patch in patches:
                    yield gen, int(patch), event

    def write_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["generation", "patch", "event"])
        for row in sorted(self.iter_rows()):
            writer.writerow(row)


@dataclass(frozen=True)
class CoupledRun:
    states: list
    occupancies: list
    bounds: list
    report: DeviationReport


def _check_coupling(occ: OccupancyState, bound: OccupancyState):
    # Domination must hold pointwise; a failure is an engine bug.
    if occ.n_patches != bound.n_patches or occ.i_min != bound.i_min:
        raise CouplingViolationError(
            f"window mismatch at generation {occ.generation}: "
            f"{occ.window} vs {bound.window}")
    bad = (occ.occ & ~bound.occ) | (occ.age < bound.age)
    if bad.any():
        patch = int(occ.patches()[bad][0])
        row = patch - occ.i_min
        raise CouplingViolationError(
            f"generation {occ.generation}, patch {patch}: occupancy "
            f"(O={int(occ.occ[row])}, h={int(occ.age[row])}) escapes bound "
            f"(O={int(bound.occ[row])}, h={int(bound.age[row])})")


def coupled_run(params: Params, init: wfsb.SeedBankState, generations, seed,
                mode="aggregate", audit=False, epsilon=None,
                scan=True) -> CoupledRun:
    """Run both processes on shared extinction fields for N generations.

    Checks the domination invariant every generation and returns the full
    trajectories plus a DeviationReport.  `audit=True` switches the engine
    to the instrumented per-draw mode and records parent_miss events;
    `scan=False` skips the census/germination deviation pass (divergence is
    always recorded).
    """
    state = init
    occ = derive_occupancy(init)
    bound = boa_from_occupancy(occ)
    states, occs, bounds = [state], [occ], [bound]
    par_sets = []
    for _ in range(generations):
        ext = wfsb.sample_extinction_window(params, state, seed)
        if audit:
            state, par = wfsb.wfsb_step_with_parent_audit(
                state, params, ext, seed)
            par_sets.append(state.patches()[par == 1])
        else:
            state = wfsb.wfsb_step(state, params, ext, seed, mode=mode)
            par_sets.append(np.empty(0, np.int64))
        occ = derive_occupancy(state, previous=occ)
        bound = boa_step(bound, params, ext, grow=state.torus is None)
        _check_coupling(occ, bound)
        states.append(state)
        occs.append(occ)
        bounds.append(bound)
    report = deviation_scan(params, states, occs, bounds, seed,
                            epsilon=epsilon, parent_miss=par_sets,
                            audited=audit, censuses=scan)
    return CoupledRun(states=states, occupancies=occs, bounds=bounds,
                      report=report)


def deviation_scan(params: Params, states, occupancies, bounds, seed,
                   epsilon=None, parent_miss=None, audited=False,
                   censuses=True) -> DeviationReport:
    """Classify every generation's deviations of a coupled trajectory.

    Census-based events (germination_miss, census_escape) inspect the
    youngest cohort at the patch's occupancy age; they are only evaluated
    where that cohort was created inside the simulated window, because
    patches entering at the moving edge carry placeholder expired ghosts
    whose censuses say nothing about the process.
    """
    N = len(states) - 1
    if len(occupancies) != N + 1 or len(bounds) != N + 1:
        raise RangeError("trajectory lists must have equal lengths")
    if epsilon is None:
        epsilon = default_epsilon(params)
    elif not 0.0 < epsilon < 1.0:
        raise RangeError(
            f"parameter 'epsilon': must lie in (0, 1), got {epsilon}")

    H, gm, M, cap = params.H, params.gm, params.M, params.age_cap
    init_window = states[0].window
    a_slack = np.array([window_slack(h) for h in range(cap + 1)])
    centers = gm * (1.0 - gm / M) ** np.arange(cap + 1)

    divergence, germ_miss, escape = [], [], []
    for n in range(N + 1):
        state, occ, bound = states[n], occupancies[n], bounds[n]
        patches = occ.patches()
        divergence.append(
            patches[(occ.occ != bound.occ) | (occ.age != bound.age)])

        if state.torus is not None:
            entry = np.zeros(occ.n_patches, np.int64)
        else:
            entry = np.maximum(init_window.i_min - patches,
                               patches - init_window.i_max)
            entry = np.maximum(entry, 0)
        # youngest cohort is represented iff the patch was simulated from
        # generation 0 (its initial ages are ground truth) or the cohort was
        # created after the patch entered the window
        faithful = (occ.age <= H) & ((entry == 0) | (n - occ.age >= entry))

        if censuses and faithful.any():
            cohort = state.age == occ.age[:, None]
            if epsilon is not None:
                counts = cohort.sum(axis=1)
                lo = centers[occ.age] - gm * epsilon * a_slack[occ.age]
                hi = centers[occ.age] + gm * epsilon * a_slack[occ.age]
                escape.append(
                    patches[faithful & ((counts < lo) | (counts > hi))])
            else:
                escape.append(np.empty(0, np.int64))
            if n < N:
                slots = IMPL["germination_slots"](seed, n, patches, gm, M)
                rows = np.arange(occ.n_patches)[:, None]
                young = cohort[rows, slots].any(axis=1)
                germ_miss.append(patches[faithful & ~young])
            else:
                germ_miss.append(np.empty(0, np.int64))
        else:
            escape.append(np.empty(0, np.int64))
            germ_miss.append(np.empty(0, np.int64))

    if parent_miss is None:
        parent_miss = [np.empty(0, np.int64) for _ in range(N)]
    parent_miss = list(parent_miss)
    if len(parent_miss) == N:
        parent_miss.append(np.empty(0, np.int64))
    elif len(parent_miss) != N + 1:
        raise RangeError(f"parameter 'parent_miss': expected {N} transition "
                         f"entries, got {len(parent_miss)}")
    return DeviationReport(
        epsilon=epsilon, audited=audited, divergence=divergence,
        parent_miss=parent_miss, germination_miss=germ_miss,
        census_escape=escape)


def dump_coupled_csv(run: CoupledRun, fileobj, fingerprint=""):
    """(generation, patch, occ_bit, occ_age, bound_bit, bound_age, diverged)."""
    if fingerprint:
        fileobj.write(f"# config_fingerprint={fingerprint}\n")
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["generation", "patch", "occ_bit", "occ_age",
                     "bound_bit", "bound_age", "diverged"])
    for occ, bound in zip(run.occupancies, run.bounds):
        pats = occ.patches()
        diff = (occ.occ != bound.occ) | (occ.age != bound.age)
        for r in range(occ.n_patches):
            writer.writerow([occ.generation, int(pats[r]),
                             int(occ.occ[r]), int(occ.age[r]),
                             int(bound.occ[r]), int(bound.age[r]),
                             int(diff[r])])

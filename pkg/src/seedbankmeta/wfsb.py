"""The k-parent seed-bank metapopulation engine.

A state is a window of patches, each holding M compartments with a type bit
(1 = descends from the founding population, 0 = ghost) and an age.  One
generation: every patch germinates floor(g*M) distinct compartments; an
i.i.d. Bernoulli(p) extinction event per patch kills that patch's standing
plants; each germinated compartment is refilled by drawing k parent
candidates (offset -1/0/+1 with probability c/1-2c/c, then a uniform
germinated compartment of that patch) and taking the best type among viable
candidates, where a candidate is viable iff its pre-germination type is 1,
its pre-germination age is <= H, and its patch is not extinct.
Non-germinating compartments keep their type and age by one more generation
(ages saturate at H+1, beyond which they are dynamically indistinguishable).

On the line the window grows by one patch per side per generation; patches
outside are implicitly all-ghost at the age cap.  On a torus indices wrap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import core
from ._kernels import IMPL
from .core import ExtinctionField, Params, Window
from .errors import RangeError, WindowMismatchError

STEP_MODES = ("aggregate", "perdraw")


@dataclass(frozen=True)
class SeedBankState:
    """Compartment-level state of a patch window at one generation."""

    generation: int
    i_min: int
    xi: np.ndarray       # (patches, M) uint8 type bits
    age: np.ndarray      # (patches, M) int64 ages, saturated at age_cap
    age_cap: int
    torus: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=np.uint8))
        object.__setattr__(self, "age", np.asarray(self.age, dtype=np.int64))
        if self.xi.shape != self.age.shape:
            raise ValueError("xi and age shapes differ")
        self.xi.setflags(write=False)
        self.age.setflags(write=False)

    @property
    def M(self) -> int:
        return self.xi.shape[1]

    @property
    def n_patches(self) -> int:
        return self.xi.shape[0]

    @property
    def window(self) -> Window:
        return Window(self.i_min, self.i_min + self.n_patches - 1)

    def patches(self) -> np.ndarray:
        return self.window.patches()

    def patch_row(self, patch) -> int:
        if self.torus is not None:
            patch = patch % self.torus
        row = patch - self.i_min
        if not 0 <= row < self.n_patches:
            raise IndexError(f"patch {patch} outside window {self.window}")
        return row


def all_ghost_state(params: Params, window: Window | None = None) -> SeedBankState:
    """Every compartment ghost at the age cap."""
    if params.topology == core.TOPOLOGY_TORUS:
        n, i_min, torus = params.L, 0, params.L
    else:
        window = window or Window(0, 0)
        n, i_min, torus = window.width, window.i_min, None
    shape = (n, params.M)
    return SeedBankState(generation=0, i_min=i_min,
                         xi=np.zeros(shape, np.uint8),
                         age=np.full(shape, params.age_cap, np.int64),
                         age_cap=params.age_cap, torus=torus)


def make_block_state(params: Params, first_patch, n_patches, per_patch,
                     age=0) -> SeedBankState:
    """`n_patches` consecutive patches seeded with `per_patch` type-1 seeds.

    Seeds sit in the first `per_patch` compartments at the given age; all
    other compartments are ghosts at the age cap.
    """
    if not 0 < per_patch <= params.M:
        raise RangeError(f"parameter 'per_patch': must lie in [1, M], got {per_patch}")
    if params.topology == core.TOPOLOGY_TORUS and n_patches > params.L:
        raise RangeError("seeded block exceeds torus size")
    window = Window(first_patch, first_patch + n_patches - 1)
    state = all_ghost_state(params, window)
    xi = state.xi.copy()
    age_arr = state.age.copy()
    for patch in range(first_patch, first_patch + n_patches):
        row = state.patch_row(patch)
        xi[row, :per_patch] = 1
        age_arr[row, :per_patch] = min(age, params.age_cap)
    return SeedBankState(generation=0, i_min=state.i_min, xi=xi, age=age_arr,
                         age_cap=params.age_cap, torus=state.torus)


def germination_sample(params: Params, generation, patch, seed) -> np.ndarray:
    """The floor(g*M) distinct compartments germinating in one patch.

    Returned in internal sampling order (slot order); treat as a set.
    """
    pats = np.asarray([patch], dtype=np.int64)
    return IMPL["germination_slots"](seed, generation, pats, params.gm,
                                     params.M)[0]


def choose_parent_offsets(params: Params, count, stream: core.KeyedStream) -> np.ndarray:
    """`count` parent patch offsets in {-1, 0, +1} with P(+-1) = c."""
    u = stream.uniforms(count)
    return np.where(u < params.c, -1,
                    np.where(u < 2.0 * params.c, 1, 0)).astype(np.int8)


def _check_ext(state: SeedBankState, params: Params, ext: ExtinctionField):
    if ext.generation != state.generation + 1:
        raise WindowMismatchError(
            f"extinction field generation {ext.generation} != "
            f"state generation + 1 = {state.generation + 1}")
    if state.torus is not None:
        if ext.i_min != 0 or len(ext.bits) != state.torus:
            raise WindowMismatchError("extinction field must cover the torus")
    else:
        needed = state.window.expand(1)
        if not ext.window.covers(needed):
            raise WindowMismatchError(
                f"extinction field window {ext.window} does not cover "
                f"{needed}")


def wfsb_step(state: SeedBankState, params: Params, ext: ExtinctionField,
              seed, mode="aggregate") -> SeedBankState:
    """Advance one generation; returns the new state."""
    new_state, _ = wfsb_step_with_parent_audit(state, params, ext, seed,
                                               mode=mode, audit=False)
    return new_state


def wfsb_step_with_parent_audit(state: SeedBankState, params: Params,
                                ext: ExtinctionField, seed, mode="aggregate",
                                audit=True):
    """Advance one generation, optionally auditing parent-choice coverage.

    Returns (state, flags) where flags[r] = 1 iff some refilled compartment
    of patch row r never picked some germinated plant of its neighborhood
    among its k parent candidates (audit requires perdraw mode).
    """
    if mode not in STEP_MODES:
        raise RangeError(f"parameter 'mode': must be one of {STEP_MODES}, got {mode!r}")
    if audit and mode != "perdraw":
        mode = "perdraw"
    _check_ext(state, params, ext)

    wrap = state.torus is not None
    if wrap:
        xi, age, i_min = state.xi, state.age, 0
    else:
        # window grows one patch per side; newcomers are ghosts at the cap
        pad_xi = np.zeros((1, params.M), np.uint8)
        pad_age = np.full((1, params.M), params.age_cap, np.int64)
        xi = np.concatenate([pad_xi, state.xi, pad_xi])
        age = np.concatenate([pad_age, state.age, pad_age])
        i_min = state.i_min - 1

    n = xi.shape[0]
    rows = np.arange(n) + (i_min - ext.i_min)
    bits = np.asarray(ext.bits, dtype=bool)[rows % len(ext.bits)] if wrap \
        else np.asarray(ext.bits, dtype=bool)[rows]

    new_gen = state.generation + 1
    xi_new, age_new, par = IMPL["step_generation"](
        xi, age, bits, seed, state.generation, i_min, params.gm, params.k,
        params.c, params.H, wrap, mode, audit)
    new_state = SeedBankState(generation=new_gen, i_min=i_min, xi=xi_new,
                              age=age_new, age_cap=params.age_cap,
                              torus=state.torus)
    return new_state, par


def simulate_generations(params: Params, init: SeedBankState, generations,
                         seed, mode="aggregate", record=True,
                         stop_when_empty=False):
    """Run `generations` steps; returns the list of states (or just the last).

    `stop_when_empty` stops early once no viable type-1 seed remains (the
    all-ghost set is absorbing for the viable census).
    """
    states = [init]
    state = init
    for _ in range(generations):
        ext = sample_extinction_window(params, state, seed)
        state = wfsb_step(state, params, ext, seed, mode=mode)
        if record:
            states.append(state)
        if stop_when_empty and viable_type1_census(state).sum() == 0:
            break
    return states if record else [state]


def sample_extinction_window(params: Params, state: SeedBankState,
                             seed) -> ExtinctionField:
    """The next generation's extinction field over the window a step needs."""
    if state.torus is not None:
        window = Window(0, state.torus - 1)
    else:
        window = state.window.expand(2)
    return core.sample_extinction_field(params, state.generation + 1, window,
                                        seed)


def viable_type1_census(state: SeedBankState) -> np.ndarray:
    """Per-patch count of type-1 seeds young enough to produce plants."""
    viable = (state.xi == 1) & (state.age <= state.age_cap - 1)
    return viable.sum(axis=1)


def type1_census(state: SeedBankState) -> np.ndarray:
    """Per-patch count of all type-1 seeds, viable or expired."""
    return (state.xi == 1).sum(axis=1)


def germination_overlap_tail_bound(params: Params, card_e, epsilon) -> float:
    """Bound on each tail of |E ∩ G| around its mean |E|*gm/M.

    |E ∩ G| is hypergeometric for any marked compartment set E; both
    P(|E ∩ G| >= |E|(1+eps)gm/M) and P(|E ∩ G| <= |E|(1-eps)gm/M) are at
    most exp(-2 eps^2 |E|^2 gm / M^2).
    """
    if not 0 < card_e < params.M:
        raise RangeError(
            f"parameter 'card_e': must lie in (0, M), got {card_e}")
    return math.exp(-2.0 * epsilon ** 2 * card_e ** 2 * params.gm
                    / params.M ** 2)


# ---------------------------------------------------------------------------
# Offspring laws of a single germinated plant (one transition, no extinction)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OffspringLaw:
    """Sum of Binomial(gm, q_center) + 2 x Binomial(gm, q_side) seeds."""

    gm: int
    q_center: float
    q_side: float
    pmf: np.ndarray

    def __post_init__(self):
        self.pmf.setflags(write=False)

    @property
    def support(self) -> np.ndarray:
        return np.arange(3 * self.gm + 1)

    def mean(self) -> float:
        return float(self.gm * (self.q_center + 2.0 * self.q_side))


def _binomial_sum_law(gm, q_center, q_side) -> OffspringLaw:
    counts = np.arange(gm + 1)
    center = stats.binom.pmf(counts, gm, q_center)
    side = stats.binom.pmf(counts, gm, q_side)
    pmf = np.convolve(np.convolve(center, side), side)
    return OffspringLaw(gm=gm, q_center=float(q_center), q_side=float(q_side),
                        pmf=pmf)


def isolated_offspring_law(params: Params) -> OffspringLaw:
    """Offspring of one plant whose whole neighborhood is otherwise ghost.

    Each same-patch refill picks it at least once with probability
    1-(1-(1-2c)/gm)^k, each neighbor-patch refill with 1-(1-c/gm)^k.
    """
    gm, k, c = params.gm, params.k, params.c
    q_center = -np.expm1(k * np.log1p(-(1.0 - 2.0 * c) / gm))
    q_side = -np.expm1(k * np.log1p(-c / gm))
    return _binomial_sum_law(gm, q_center, q_side)


def competition_offspring_law(params: Params) -> OffspringLaw:
    """Offspring of one plant when every neighborhood slot holds a real plant.

    With all candidates viable, a refill is attributed to its first drawn
    parent, so the per-refill probability is (1-2c)/gm same-patch and c/gm
    per neighbor patch; the mean is exactly 1.
    """
    gm, c = params.gm, params.c
    return _binomial_sum_law(gm, (1.0 - 2.0 * c) / gm, c / gm)


def sample_offspring_counts(params: Params, n_accepted, seed,
                            competition=False, batch_margin=1.3):
    """Offspring counts of a focal germinated plant over `n_accepted` runs.

    Simulates single transitions with the perdraw engine kernel at p = 0,
    conditioning on the focal compartment germinating (rejection); counts
    are attributed to the first viable type-1 parent candidate in draw
    order.  Returns an int array of length `n_accepted`.
    """
    M, gm = params.M, params.gm
    if competition:
        # five fully-real patches: the focal patch and both neighbors then
        # see only viable draws, so attribution is exactly first-draw
        xi = np.ones((5, M), np.uint8)
        age = np.zeros((5, M), np.int64)
        focal_row = 2
    else:
        # a single type-1 seed in an otherwise ghost neighborhood
        xi = np.zeros((3, M), np.uint8)
        xi[1, 0] = 1
        age = np.full((3, M), params.age_cap, np.int64)
        age[1, 0] = 0
        focal_row = 1

    out = np.empty(0, np.int64)
    attempt = 0
    while len(out) < n_accepted:
        remaining = n_accepted - len(out)
        n_reps = int(remaining / params.g * batch_margin) + 64
        counts = IMPL["offspring_batch"](
            xi, age, core.derive_run_seed(seed, 17, attempt), n_reps, gm,
            params.k, params.c, params.H, focal_row, 0)
        out = np.concatenate([out, counts[counts >= 0]])
        attempt += 1
    return out[:n_accepted]


# ---------------------------------------------------------------------------
# CSV dump
# ---------------------------------------------------------------------------


def dump_states_csv(states, fileobj, fingerprint=""):
    """Write compartment-level rows (generation, patch, compartment, xi, age)."""
    if fingerprint:
        fileobj.write(f"# config_fingerprint={fingerprint}\n")
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["generation", "patch", "compartment", "xi", "age"])
    for state in states:
        pats = state.patches()
        for r in range(state.n_patches):
            for j in range(state.M):
                writer.writerow([state.generation, int(pats[r]), j,
                                 int(state.xi[r, j]), int(state.age[r, j])])

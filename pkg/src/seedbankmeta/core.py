"""Parameter validation, keyed counter-based random streams, lattice windows.

Every random draw in the package is addressed by a key
(run_seed, generation, patch, role, index) plus a per-draw counter, so any
draw can be regenerated in O(1) from coordinates alone.  This is what makes
trajectories independent of evaluation order, worker count, and backend
(numba vs numpy), and it lets coupled processes share exactly the draws they
are supposed to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateKError, RangeError

# ---------------------------------------------------------------------------
# Keyed counter RNG
# ---------------------------------------------------------------------------
# splitmix64 finalizer; word absorption and draw counters use two distinct
# odd strides so that (..., index=a, ctr=b) never collides with
# (..., index=b, ctr=a) by construction.

_MASK64 = 0xFFFFFFFFFFFFFFFF

MIX_A = np.uint64(0xBF58476D1CE4E5B9)
MIX_B = np.uint64(0x94D049BB133111EB)
WORD_STRIDE = np.uint64(0x9E3779B97F4A7C15)
CTR_STRIDE = np.uint64(0xC2B2AE3D27D4EB4F)

_R30 = np.uint64(30)
_R27 = np.uint64(27)
_R31 = np.uint64(31)
_R11 = np.uint64(11)
_INV53 = 2.0 ** -53

# Stream roles.  One role per distinct consumer of randomness; keys differing
# only in role are independent streams.
ROLE_EXTINCTION = 0
ROLE_GERMINATION = 1
ROLE_PARENT_OFFSET = 2
ROLE_PARENT_CHOICE = 3
ROLE_INIT_CONDITION = 4
ROLE_PERC_ROW = 5
ROLE_SEED_DERIVATION = 6


def _u64(values):
    """Cast ints or int arrays to uint64 with two's-complement wrapping."""
    if isinstance(values, np.ndarray):
        return values.astype(np.int64, copy=False).astype(np.uint64)
    if np.isscalar(values):
        return np.uint64(int(values) & _MASK64)
    return np.asarray(values, dtype=np.int64).astype(np.uint64)


def mix64(z):
    """splitmix64 finalizer on uint64 arrays (elementwise, wrapping)."""
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64)
        z = (z ^ (z >> _R30)) * MIX_A
        z = (z ^ (z >> _R27)) * MIX_B
        return z ^ (z >> _R31)


def key_state(run_seed, generation=0, patch=0, role=0, index=0):
    """Hash a full key into a uint64 mixing state.

    Arguments broadcast; the result has the broadcast shape (possibly 0-d).
    """
    with np.errstate(over="ignore"):
        h = mix64(np.asarray(_u64(run_seed)))
        for word in (generation, patch, role, index):
            h = mix64(h ^ (_u64(word) * WORD_STRIDE))
    return h


def unit_draws(state, ctr):
    """Uniform [0, 1) draws for counter values `ctr` under a key state."""
    with np.errstate(over="ignore"):
        z = mix64(np.asarray(state, dtype=np.uint64) ^ (_u64(ctr) * CTR_STRIDE))
    return (z >> _R11) * _INV53


@dataclass(frozen=True)
class RngKey:
    """Address of one random stream."""

    run_seed: int
    generation: int = 0
    patch: int = 0
    role: int = ROLE_EXTINCTION
    index: int = 0


class KeyedStream:
    """Sequential view over the draws of one key (counter auto-increments)."""

    def __init__(self, key: RngKey):
        self.key = key
        self._state = key_state(key.run_seed, key.generation, key.patch,
                                key.role, key.index)
        self._ctr = 0

    def uniforms(self, n):
        ctrs = np.arange(self._ctr, self._ctr + n, dtype=np.int64)
        self._ctr += n
        return unit_draws(self._state, ctrs)

    def integers(self, n, upper):
        """n draws uniform on [0, upper)."""
        return (self.uniforms(n) * upper).astype(np.int64)


def derive_stream(key: RngKey) -> KeyedStream:
    """Open the random stream addressed by `key`."""
    return KeyedStream(key)


def derive_run_seed(seed, stream_id, replicate=0) -> int:
    """A decorrelated child seed for (stream_id, replicate) under `seed`."""
    return int(key_state(seed, stream_id, replicate, ROLE_SEED_DERIVATION, 0))


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

TOPOLOGY_LINE = "line"
TOPOLOGY_TORUS = "torus"


@dataclass(frozen=True)
class Params:
    """Validated model parameters; construct through validate_params."""

    M: int
    H: int
    g: float
    c: float
    p: float
    k: int
    alpha: float | None = None
    topology: str = TOPOLOGY_LINE
    L: int | None = None

    @property
    def gm(self) -> int:
        """Number of compartments germinating per patch per generation."""
        return floor_gm(self.g, self.M)

    @property
    def c_star(self) -> float:
        """min(c, 1 - 2c), the smallest parent-offset probability."""
        return min(self.c, 1.0 - 2.0 * self.c)

    @property
    def age_cap(self) -> int:
        """Ages saturate here; any age > H is dynamically equivalent."""
        return self.H + 1


def floor_gm(g, M) -> int:
    # nudge so decimal inputs like g=0.3, M=10 floor to the intended integer
    return int(math.floor(g * M + 1e-9))


def k_from_alpha(M, alpha) -> int:
    return int(math.ceil(M ** alpha - 1e-9))


def _require(cond, name, message):
    if not cond:
        raise RangeError(f"parameter '{name}': {message}")


def validate_params(raw: Mapping | None = None, **overrides) -> Params:
    """Validate a raw parameter record and return a frozen Params.

    Accepts a mapping and/or keyword overrides (overrides win).  If `alpha`
    is present, k is recomputed as ceil(M**alpha); an explicit contradictory
    k is rejected.
    """
    rec = dict(raw or {})
    rec.update(overrides)

    known = {"M", "H", "g", "c", "p", "k", "alpha", "topology", "L"}
    unknown = set(rec) - known
    if unknown:
        raise RangeError(f"unknown parameter(s): {sorted(unknown)}")

    for req in ("M", "H", "g", "c", "p"):
        _require(req in rec, req, "is required")

    M = rec["M"]
    _require(isinstance(M, (int, np.integer)) and M >= 2, "M",
             f"must be an integer >= 2, got {M!r}")
    M = int(M)

    H = rec["H"]
    _require(isinstance(H, (int, np.integer)) and H >= 0, "H",
             f"must be an integer >= 0, got {H!r}")
    H = int(H)

    g = float(rec["g"])
    _require(0.0 < g <= 1.0, "g", f"must lie in (0, 1], got {g}")
    _require(floor_gm(g, M) >= 1, "g",
             f"floor(g*M) must be >= 1, got floor({g}*{M}) = {floor_gm(g, M)}")

    c = float(rec["c"])
    _require(0.0 < c < 0.5, "c", f"must lie in (0, 0.5), got {c}")

    p = float(rec["p"])
    _require(0.0 <= p <= 1.0, "p", f"must lie in [0, 1], got {p}")

    alpha = rec.get("alpha")
    k = rec.get("k")
    if alpha is not None:
        alpha = float(alpha)
        _require(alpha > 1.0, "alpha", f"must exceed 1, got {alpha}")
        expected = k_from_alpha(M, alpha)
        if k is not None and int(k) != expected:
            raise RangeError(
                f"parameter 'k': explicit value {k} contradicts "
                f"ceil(M**alpha) = {expected} for M={M}, alpha={alpha}")
        k = expected
    _require(k is not None, "k", "is required unless alpha is given")
    _require(isinstance(k, (int, np.integer)), "k",
             f"must be an integer, got {k!r}")
    k = int(k)
    if k <= 1:
        raise DegenerateKError(
            f"parameter 'k': got {k}; with a single parent candidate per seed "
            "real lineages have no redundancy over ghosts and a finite "
            "population empties almost surely, so k >= 2 is required")

    topology = rec.get("topology", TOPOLOGY_LINE)
    L = rec.get("L")
    _require(topology in (TOPOLOGY_LINE, TOPOLOGY_TORUS), "topology",
             f"must be '{TOPOLOGY_LINE}' or '{TOPOLOGY_TORUS}', got {topology!r}")
    if topology == TOPOLOGY_TORUS:
        _require(L is not None and isinstance(L, (int, np.integer)) and int(L) >= 3,
                 "L", f"torus size must be an integer >= 3, got {L!r}")
        L = int(L)
    else:
        _require(L is None, "L", "only valid for torus topology")

    return Params(M=M, H=H, g=g, c=c, p=p, k=k, alpha=alpha,
                  topology=topology, L=L)


# ---------------------------------------------------------------------------
# Windows and extinction fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Closed integer interval of materialized patches on the line."""

    i_min: int
    i_max: int

    def __post_init__(self):
        if self.i_max < self.i_min:
            raise ValueError(f"empty window [{self.i_min}, {self.i_max}]")

    @property
    def width(self) -> int:
        return self.i_max - self.i_min + 1

    def expand(self, by=1) -> "Window":
        return Window(self.i_min - by, self.i_max + by)

    def covers(self, other: "Window") -> bool:
        return self.i_min <= other.i_min and self.i_max >= other.i_max

    def patches(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1, dtype=np.int64)


@dataclass(frozen=True)
class ExtinctionField:
    """One generation's extinction indicators over a patch window.

    `bits[r]` is the indicator for patch `i_min + r`.  On a torus the window
    is [0, L-1] and indices wrap.
    """

    generation: int
    i_min: int
    bits: np.ndarray
    torus: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))
        self.bits.setflags(write=False)

    @property
    def window(self) -> Window:
        return Window(self.i_min, self.i_min + len(self.bits) - 1)

    def bit(self, patch) -> bool:
        if self.torus is not None:
            patch = patch % self.torus
        return bool(self.bits[patch - self.i_min])


def sample_extinction_field(params: Params, generation, window: Window,
                            seed) -> ExtinctionField:
    """Sample the i.i.d. Bernoulli(p) extinction indicators for one generation.

    Each bit is a pure function of (seed, generation, patch), so a field can
    be resampled for any window and is shared for free between coupled
    processes keyed off the same seed.
    """
    patches = window.patches()
    u = unit_draws(key_state(seed, generation, patches, ROLE_EXTINCTION, 0), 0)
    torus = params.L if params.topology == TOPOLOGY_TORUS else None
    return ExtinctionField(generation=int(generation), i_min=window.i_min,
                           bits=u < params.p, torus=torus)

"""Hot numeric kernels: numba @njit implementations plus pure-numpy twins.

Backend selection: set SEEDBANKMETA_BACKEND=numpy to force the numpy path,
SEEDBANKMETA_BACKEND=numba to require numba (falls back with a warning if it
is not importable).  Default is numba when available.  Both backends consume
the same keyed draws, so results are bit-identical; `tests` assert this and
`python -m seedbankmeta.bench` compares their speed.

All randomness is addressed by (seed, generation, patch, role, index, ctr);
see core.key_state / core.unit_draws for the reference construction the
numba helpers below replicate scalar-for-scalar.
"""

from __future__ import annotations

import math
import os
import warnings

import numpy as np

from . import core
from .core import (
    ROLE_GERMINATION,
    ROLE_PARENT_CHOICE,
    ROLE_PARENT_OFFSET,
    ROLE_PERC_ROW,
    ROLE_SEED_DERIVATION,
)

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


BACKEND_ENV = "SEEDBANKMETA_BACKEND"

_MASK64 = 0xFFFFFFFFFFFFFFFF

# uint64 twins of the core RNG constants (module globals are typed constants
# inside @njit functions)
_MIX_A = core.MIX_A
_MIX_B = core.MIX_B
_WORD = core.WORD_STRIDE
_CTR = core.CTR_STRIDE
_R30 = np.uint64(30)
_R27 = np.uint64(27)
_R31 = np.uint64(31)
_R11 = np.uint64(11)
_INV53 = 2.0 ** -53

_ROLE_GERM = np.uint64(ROLE_GERMINATION)
_ROLE_POFF = np.uint64(ROLE_PARENT_OFFSET)
_ROLE_PCHO = np.uint64(ROLE_PARENT_CHOICE)
_ROLE_PERC = np.uint64(ROLE_PERC_ROW)
_ROLE_SEED = np.uint64(ROLE_SEED_DERIVATION)
_ZERO = np.uint64(0)


def _as_seed(seed) -> np.uint64:
    return np.uint64(int(seed) & _MASK64)


# ===========================================================================
# numba scalar RNG helpers
# ===========================================================================


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _R30)) * _MIX_A
    z = (z ^ (z >> _R27)) * _MIX_B
    return z ^ (z >> _R31)


@njit(cache=True, inline="always")
def _absorb(h, w):
    return _mix(h ^ (w * _WORD))


@njit(cache=True, inline="always")
def _draw(h, ctr):
    z = _mix(h ^ (ctr * _CTR))
    return (z >> _R11) * _INV53


@njit(cache=True, inline="always")
def _patch_state(seed, gen, patch):
    # partial key hash (seed, generation, patch); role/index absorbed later
    return _absorb(_absorb(_mix(seed), np.uint64(gen)), np.uint64(patch))


@njit(cache=True, inline="always")
def _germinate_patch(h3, perm, gm, M):
    """Partial Fisher-Yates on `perm` (preloaded 0..M-1); slots = perm[:gm]."""
    for t in range(gm):
        hk = _absorb(_absorb(h3, _ROLE_GERM), np.uint64(t))
        u = _draw(hk, _ZERO)
        j = t + int(u * (M - t))
        tmp = perm[t]
        perm[t] = perm[j]
        perm[j] = tmp


# ===========================================================================
# germination slots
# ===========================================================================


@njit(cache=True, nogil=True)
def _germination_slots_nb(seed, gen, patches, gm, M):
    P = patches.shape[0]
    slots = np.empty((P, gm), np.int64)
    perm = np.empty(M, np.int64)
    for r in range(P):
        for i in range(M):
            perm[i] = i
        h3 = _patch_state(seed, gen, patches[r])
        _germinate_patch(h3, perm, gm, M)
        for t in range(gm):
            slots[r, t] = perm[t]
    return slots


def _germination_slots_np(seed, gen, patches, gm, M):
    P = patches.shape[0]
    perm = np.tile(np.arange(M, dtype=np.int64), (P, 1))
    rows = np.arange(P)
    for t in range(gm):
        st = core.key_state(seed, gen, patches, ROLE_GERMINATION, t)
        u = core.unit_draws(st, 0)
        j = t + (u * (M - t)).astype(np.int64)
        tmp = perm[rows, t].copy()
        perm[rows, t] = perm[rows, j]
        perm[rows, j] = tmp
    return perm[:, :gm].copy()


def germination_slots_nb(seed, gen, patches, gm, M):
    return _germination_slots_nb(_as_seed(seed), np.int64(gen),
                                 np.ascontiguousarray(patches, dtype=np.int64),
                                 np.int64(gm), np.int64(M))


# ===========================================================================
# one seed-bank generation
# ===========================================================================
# Refill success probability for one compartment given viable germinating
# counts v and extinction bits: q = ((1-2c) eff_i + c eff_{i-1} + c eff_{i+1})
# / gm and P(type 1) = 1 - (1-q)^k; exact because the k parent candidates are
# i.i.d. (offset, slot) pairs.


@njit(cache=True, inline="always")
def _refill_prob(q, k):
    if q >= 1.0:
        return 1.0
    if q <= 0.0:
        return 0.0
    return -math.expm1(k * math.log1p(-q))


@njit(cache=True, nogil=True)
def _step_aggregate_nb(xi, age, ext, seed, gen, patch0, gm, k, c, H, wrap):
    P, M = xi.shape
    slots = np.empty((P, gm), np.int64)
    v = np.zeros(P, np.int64)
    perm = np.empty(M, np.int64)
    for r in range(P):
        for i in range(M):
            perm[i] = i
        h3 = _patch_state(seed, gen, patch0 + r)
        _germinate_patch(h3, perm, gm, M)
        cnt = 0
        for t in range(gm):
            s = perm[t]
            slots[r, t] = s
            if xi[r, s] == 1 and age[r, s] <= H:
                cnt += 1
        v[r] = cnt

    xi_new = xi.copy()
    age_new = np.minimum(age + 1, H + 1)
    w_center = 1.0 - 2.0 * c
    for r in range(P):
        eff_c = 0 if ext[r] else v[r]
        eff_l = 0
        eff_r = 0
        rl = (r - 1) % P if wrap else r - 1
        rr = (r + 1) % P if wrap else r + 1
        if rl >= 0 and ext[rl] == 0:
            eff_l = v[rl]
        if rr < P and ext[rr] == 0:
            eff_r = v[rr]
        q = (w_center * eff_c + c * (eff_l + eff_r)) / gm
        pr = _refill_prob(q, k)
        h3 = _patch_state(seed, gen, patch0 + r)
        for t in range(gm):
            hk = _absorb(_absorb(h3, _ROLE_PCHO), np.uint64(t))
            u = _draw(hk, _ZERO)
            s = slots[r, t]
            xi_new[r, s] = 1 if u < pr else 0
            age_new[r, s] = 0
    return xi_new, age_new


@njit(cache=True, nogil=True)
def _step_perdraw_nb(xi, age, ext, seed, gen, patch0, gm, k, c, H, wrap, audit):
    P, M = xi.shape
    slots = np.empty((P, gm), np.int64)
    viable = np.zeros((P, gm), np.uint8)
    perm = np.empty(M, np.int64)
    for r in range(P):
        for i in range(M):
            perm[i] = i
        h3 = _patch_state(seed, gen, patch0 + r)
        _germinate_patch(h3, perm, gm, M)
        for t in range(gm):
            s = perm[t]
            slots[r, t] = s
            if xi[r, s] == 1 and age[r, s] <= H:
                viable[r, t] = 1

    xi_new = xi.copy()
    age_new = np.minimum(age + 1, H + 1)
    par = np.zeros(P, np.uint8)
    two_c = 2.0 * c
    covered = np.empty(3 * gm, np.uint8)
    for r in range(P):
        h3 = _patch_state(seed, gen, patch0 + r)
        for t in range(gm):
            hoff = _absorb(_absorb(h3, _ROLE_POFF), np.uint64(t))
            hcho = _absorb(_absorb(h3, _ROLE_PCHO), np.uint64(t))
            got = 0
            ncov = 0
            if audit:
                covered[:] = 0
            for l in range(k):
                ul = np.uint64(l)
                uo = _draw(hoff, ul)
                off = -1 if uo < c else (1 if uo < two_c else 0)
                uc = _draw(hcho, ul)
                s = int(uc * gm)
                if audit:
                    idx = (off + 1) * gm + s
                    if covered[idx] == 0:
                        covered[idx] = 1
                        ncov += 1
                if got == 0:
                    rn = r + off
                    if wrap:
                        rn = rn % P
                    if 0 <= rn < P and ext[rn] == 0 and viable[rn, s] == 1:
                        got = 1
                        if not audit:
                            break
            s0 = slots[r, t]
            xi_new[r, s0] = got
            age_new[r, s0] = 0
            if audit and ncov < 3 * gm:
                par[r] = 1
    return xi_new, age_new, par


def _viability(xi, age, slots, H):
    rows = np.arange(xi.shape[0])[:, None]
    sl_xi = xi[rows, slots]
    sl_age = age[rows, slots]
    return (sl_xi == 1) & (sl_age <= H)


def _neighbor_eff(v, ext, wrap):
    eff = np.where(ext, 0, v)
    if wrap:
        eff_l = np.roll(eff, 1)
        eff_r = np.roll(eff, -1)
    else:
        eff_l = np.concatenate(([0], eff[:-1]))
        eff_r = np.concatenate((eff[1:], [0]))
    return eff, eff_l, eff_r


def _refill_prob_np(q, k):
    pr = np.empty_like(q)
    lo = q <= 0.0
    hi = q >= 1.0
    mid = ~(lo | hi)
    pr[lo] = 0.0
    pr[hi] = 1.0
    pr[mid] = -np.expm1(k * np.log1p(-q[mid]))
    return pr


def _step_aggregate_np(xi, age, ext, seed, gen, patch0, gm, k, c, H, wrap):
    P, M = xi.shape
    patches = patch0 + np.arange(P, dtype=np.int64)
    slots = _germination_slots_np(seed, gen, patches, gm, M)
    v = _viability(xi, age, slots, H).sum(axis=1)
    eff, eff_l, eff_r = _neighbor_eff(v, ext, wrap)
    q = ((1.0 - 2.0 * c) * eff + c * (eff_l + eff_r)) / gm
    pr = _refill_prob_np(q, k)

    st = core.key_state(seed, gen, patches[:, None], ROLE_PARENT_CHOICE,
                        np.arange(gm, dtype=np.int64)[None, :])
    u = core.unit_draws(st, 0)
    new_type = (u < pr[:, None]).astype(xi.dtype)

    rows = np.arange(P)[:, None]
    xi_new = xi.copy()
    age_new = np.minimum(age + 1, H + 1)
    xi_new[rows, slots] = new_type
    age_new[rows, slots] = 0
    return xi_new, age_new


def _step_perdraw_np(xi, age, ext, seed, gen, patch0, gm, k, c, H, wrap,
                     audit):
    P, M = xi.shape
    patches = patch0 + np.arange(P, dtype=np.int64)
    slots = _germination_slots_np(seed, gen, patches, gm, M)
    viable = _viability(xi, age, slots, H)

    slot_idx = np.arange(gm, dtype=np.int64)[None, :]
    hoff = core.key_state(seed, gen, patches[:, None], ROLE_PARENT_OFFSET,
                          slot_idx)
    hcho = core.key_state(seed, gen, patches[:, None], ROLE_PARENT_CHOICE,
                          slot_idx)
    got = np.zeros((P, gm), dtype=bool)
    covered = np.zeros((P, gm, 3 * gm), dtype=bool) if audit else None
    r_idx = np.arange(P)[:, None]
    for l in range(k):
        uo = core.unit_draws(hoff, l)
        off = np.where(uo < c, -1, np.where(uo < 2.0 * c, 1, 0))
        uc = core.unit_draws(hcho, l)
        s = (uc * gm).astype(np.int64)
        rn = r_idx + off
        if wrap:
            rn = rn % P
            valid = np.ones_like(got)
        else:
            valid = (rn >= 0) & (rn < P)
        rn_c = np.clip(rn, 0, P - 1)
        hit = valid & ~ext[rn_c] & viable[rn_c, s]
        got |= hit
        if audit:
            np.put_along_axis(covered, ((off + 1) * gm + s)[..., None], True,
                              axis=2)
    rows = np.arange(P)[:, None]
    xi_new = xi.copy()
    age_new = np.minimum(age + 1, H + 1)
    xi_new[rows, slots] = got.astype(xi.dtype)
    age_new[rows, slots] = 0
    par = (covered.sum(axis=2) < 3 * gm).any(axis=1).astype(np.uint8) \
        if audit else np.zeros(P, np.uint8)
    return xi_new, age_new, par


def step_generation_nb(xi, age, ext, seed, gen, patch0, gm, k, c, H, wrap,
                       mode="aggregate", audit=False):
    args = (np.ascontiguousarray(xi), np.ascontiguousarray(age),
            np.ascontiguousarray(ext, dtype=np.uint8), _as_seed(seed),
            np.int64(gen), np.int64(patch0), np.int64(gm), np.int64(k),
            float(c), np.int64(H), bool(wrap))
    if mode == "aggregate":
        xi_new, age_new = _step_aggregate_nb(*args)
        return xi_new, age_new, np.zeros(xi.shape[0], np.uint8)
    return _step_perdraw_nb(*args, bool(audit))


def step_generation_np(xi, age, ext, seed, gen, patch0, gm, k, c, H, wrap,
                       mode="aggregate", audit=False):
    ext = np.asarray(ext, dtype=bool)
    if mode == "aggregate":
        xi_new, age_new = _step_aggregate_np(xi, age, ext, seed, gen, patch0,
                                             gm, k, c, H, wrap)
        return xi_new, age_new, np.zeros(xi.shape[0], np.uint8)
    return _step_perdraw_np(xi, age, ext, seed, gen, patch0, gm, k, c, H,
                            wrap, audit)


# ===========================================================================
# offspring attribution (one transition, no extinctions)
# ===========================================================================
# A refilled seed is attributed to the first viable type-1 parent candidate
# in draw order.  counts[rep] = -1 marks replicates rejected because the
# focal compartment did not germinate.


@njit(cache=True, nogil=True)
def _offspring_batch_nb(xi, age, seed, n_reps, gm, k, c, H, focal_row,
                        focal_comp):
    P, M = xi.shape
    counts = np.full(n_reps, -1, np.int64)
    perm = np.empty(M, np.int64)
    slots = np.empty((P, gm), np.int64)
    viable = np.zeros((P, gm), np.uint8)
    two_c = 2.0 * c
    for rep in range(n_reps):
        rep_seed = _absorb(_absorb(_absorb(_absorb(_mix(seed), _ZERO),
                                           np.uint64(rep)), _ROLE_SEED),
                           _ZERO)
        focal_slot = -1
        for r in range(P):
            for i in range(M):
                perm[i] = i
            h3 = _patch_state(rep_seed, 0, r)
            _germinate_patch(h3, perm, gm, M)
            for t in range(gm):
                s = perm[t]
                slots[r, t] = s
                viable[r, t] = 1 if (xi[r, s] == 1 and age[r, s] <= H) else 0
                if r == focal_row and s == focal_comp:
                    focal_slot = t
        if focal_slot < 0:
            continue
        n_off = 0
        for r in range(P):
            h3 = _patch_state(rep_seed, 0, r)
            for t in range(gm):
                hoff = _absorb(_absorb(h3, _ROLE_POFF), np.uint64(t))
                hcho = _absorb(_absorb(h3, _ROLE_PCHO), np.uint64(t))
                for l in range(k):
                    ul = np.uint64(l)
                    uo = _draw(hoff, ul)
                    off = -1 if uo < c else (1 if uo < two_c else 0)
                    uc = _draw(hcho, ul)
                    s = int(uc * gm)
                    rn = r + off
                    if 0 <= rn < P and viable[rn, s] == 1:
                        if rn == focal_row and s == focal_slot:
                            n_off += 1
                        break
        counts[rep] = n_off
    return counts


def _offspring_batch_np(xi, age, seed, n_reps, gm, k, c, H, focal_row,
                        focal_comp, block=256):
    # replicates are processed in blocks: every array below carries a leading
    # rep axis, everything else mirrors the scalar kernel draw for draw
    P, M = xi.shape
    counts = np.full(n_reps, -1, np.int64)
    patches = np.arange(P, dtype=np.int64)
    r_idx = patches[None, :, None]
    slot_idx = np.arange(gm, dtype=np.int64)[None, None, :]
    rows3 = patches[None, :, None]
    for lo in range(0, n_reps, block):
        reps = np.arange(lo, min(lo + block, n_reps), dtype=np.int64)
        B = len(reps)
        rep_seeds = core.key_state(seed, 0, reps, core.ROLE_SEED_DERIVATION, 0)
        seeds_c = rep_seeds[:, None]

        perm = np.broadcast_to(np.arange(M, dtype=np.int64),
                               (B, P, M)).copy()
        bidx = np.arange(B)[:, None]
        rows = patches[None, :]
        for t in range(gm):
            st = core.key_state(seeds_c, 0, rows, ROLE_GERMINATION, t)
            u = core.unit_draws(st, 0)
            j = t + (u * (M - t)).astype(np.int64)
            tmp = perm[bidx, rows, t].copy()
            perm[bidx, rows, t] = perm[bidx, rows, j]
            perm[bidx, rows, j] = tmp
        slots = perm[:, :, :gm]
        viable = (xi[rows3, slots] == 1) & (age[rows3, slots] <= H)

        focal_hits = slots[:, focal_row, :] == focal_comp
        found = focal_hits.any(axis=1)
        focal_slot = np.argmax(focal_hits, axis=1)[:, None, None]

        hoff = core.key_state(seeds_c[:, :, None], 0, r_idx,
                              ROLE_PARENT_OFFSET, slot_idx)
        hcho = core.key_state(seeds_c[:, :, None], 0, r_idx,
                              ROLE_PARENT_CHOICE, slot_idx)
        bidx3 = np.arange(B)[:, None, None]
        first_viable = np.full((B, P, gm), k, np.int64)
        first_is_focal = np.zeros((B, P, gm), dtype=bool)
        for l in range(k):
            uo = core.unit_draws(hoff, l)
            off = np.where(uo < c, -1, np.where(uo < 2.0 * c, 1, 0))
            uc = core.unit_draws(hcho, l)
            s = (uc * gm).astype(np.int64)
            rn = r_idx + off
            valid = (rn >= 0) & (rn < P)
            rn_c = np.clip(rn, 0, P - 1)
            hit = valid & viable[bidx3, rn_c, s]
            fresh = hit & (first_viable == k)
            first_viable[fresh] = l
            is_focal = (rn_c == focal_row) & (s == focal_slot)
            first_is_focal = np.where(fresh, is_focal, first_is_focal)
        block_counts = first_is_focal.sum(axis=(1, 2))
        counts[reps[found]] = block_counts[found]
    return counts


def offspring_batch_nb(xi, age, seed, n_reps, gm, k, c, H, focal_row,
                       focal_comp):
    return _offspring_batch_nb(np.ascontiguousarray(xi),
                               np.ascontiguousarray(age), _as_seed(seed),
                               np.int64(n_reps), np.int64(gm), np.int64(k),
                               float(c), np.int64(H), np.int64(focal_row),
                               np.int64(focal_comp))


# ===========================================================================
# oriented-percolation frontier
# ===========================================================================
# Site (x, t) is open iff its keyed uniform is >= p.  A site's bit is set iff
# it is boundary-open (left border column always passes, right border never)
# and some bit is set within the previous H+1 rows at offsets {-1, 0, +1};
# rows 0..H are additionally OR-ed with the base half-line x <= 0.  Returns
# the rightmost set x (excluding the left border column) over rows T..T+H,
# or -(X+1) when none is set.


@njit(cache=True, nogil=True)
def _perc_rbar_nb(seed, p, X, T, H, rep):
    width = 2 * X + 1
    span = H + 1
    hist = np.zeros((span, width), np.uint8)
    cum = np.empty(width, np.uint8)
    cur = np.empty(width, np.uint8)
    best = -(X + 1)
    for t in range(T + H + 1):
        nvalid = span if t >= span else t
        for x in range(width):
            cum[x] = 0
        for back in range(nvalid):
            row = hist[(t - 1 - back) % span]
            for x in range(width):
                cum[x] |= row[x]
        hrow = _absorb(_mix(seed), np.uint64(t))
        for x in range(width):
            pred = cum[x]
            if x > 0:
                pred |= cum[x - 1]
            if x < width - 1:
                pred |= cum[x + 1]
            bit = 0
            if pred == 1:
                if x == 0:
                    bit = 1
                elif x == width - 1:
                    bit = 0
                else:
                    hk = _absorb(_absorb(_absorb(hrow, np.uint64(x - X)),
                                         _ROLE_PERC), np.uint64(rep))
                    if _draw(hk, _ZERO) >= p:
                        bit = 1
            if t <= H and x <= X:
                bit = 1
            cur[x] = bit
        if t >= T:
            for x in range(width - 1, 0, -1):
                if cur[x] == 1:
                    if x - X > best:
                        best = x - X
                    break
        hist[t % span] = cur
    return best


def _perc_open_row_np(seed, p, X, t, rep):
    xs = np.arange(-X, X + 1, dtype=np.int64)
    u = core.unit_draws(core.key_state(seed, t, xs, ROLE_PERC_ROW, rep), 0)
    return u >= p


def _perc_rbar_np(seed, p, X, T, H, rep):
    width = 2 * X + 1
    span = H + 1
    hist = np.zeros((span, width), dtype=bool)
    base = np.arange(width) <= X
    best = -(X + 1)
    for t in range(T + H + 1):
        nvalid = min(t, span)
        if nvalid == 0:
            cum = np.zeros(width, dtype=bool)
        else:
            idx = [(t - 1 - back) % span for back in range(nvalid)]
            cum = hist[idx].any(axis=0)
        pred = cum.copy()
        pred[:-1] |= cum[1:]
        pred[1:] |= cum[:-1]
        opened = _perc_open_row_np(seed, p, X, t, rep)
        opened[0] = True
        opened[-1] = False
        cur = opened & pred
        if t <= H:
            cur |= base
        if t >= T:
            set_x = np.nonzero(cur[1:])[0]
            if len(set_x):
                best = max(best, int(set_x[-1]) + 1 - X)
        hist[t % span] = cur
    return best


def perc_rbar_nb(seed, p, X, T, H, rep=0):
    return int(_perc_rbar_nb(_as_seed(seed), float(p), np.int64(X),
                             np.int64(T), np.int64(H), np.int64(rep)))


def perc_rbar_np(seed, p, X, T, H, rep=0):
    return int(_perc_rbar_np(seed, float(p), int(X), int(T), int(H),
                             int(rep)))


# ===========================================================================
# backend dispatch
# ===========================================================================

_NUMBA_IMPL = {
    "germination_slots": germination_slots_nb,
    "step_generation": step_generation_nb,
    "offspring_batch": offspring_batch_nb,
    "perc_rbar": perc_rbar_nb,
}

_NUMPY_IMPL = {
    "germination_slots": _germination_slots_np,
    "step_generation": step_generation_np,
    "offspring_batch": _offspring_batch_np,
    "perc_rbar": perc_rbar_np,
}


def _select_backend() -> str:
    requested = os.environ.get(BACKEND_ENV, "auto").strip().lower()
    if requested in ("", "auto"):
        return "numba" if NUMBA_AVAILABLE else "numpy"
    if requested == "numba":
        if not NUMBA_AVAILABLE:
            warnings.warn("numba requested via %s but not importable; "
                          "using numpy backend" % BACKEND_ENV)
            return "numpy"
        return "numba"
    if requested == "numpy":
        return "numpy"
    warnings.warn("unknown %s=%r; using auto selection" %
                  (BACKEND_ENV, requested))
    return "numba" if NUMBA_AVAILABLE else "numpy"


ACTIVE_BACKEND = _select_backend()
IMPL = _NUMBA_IMPL if ACTIVE_BACKEND == "numba" else _NUMPY_IMPL


def backend_name() -> str:
    return ACTIVE_BACKEND


def implementations(which="active"):
    """Return a kernel table: 'active', 'numba', or 'numpy'."""
    if which == "active":
        return IMPL
    if which == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend not available")
        return _NUMBA_IMPL
    if which == "numpy":
        return _NUMPY_IMPL
    raise ValueError(f"unknown backend {which!r}")

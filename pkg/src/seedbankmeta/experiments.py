"""Reproduction harnesses on top of the engine.

Four experiment kinds:

* invasion: seed a block of patches on a torus, track per-generation
  type-1 seed densities and per-replicate extinction generations.
* convergence: fraction of coupled runs whose full-process occupancy never
  deviates from its upper bound through N generations, as M grows with
  k = ceil(M^alpha).
* threshold_curve: the percolation scan per seed-bank depth H.
* offspring_test: goodness of fit of sampled offspring counts against the
  analytic law, plus the mean-one competition check.

Replicates are independent tasks keyed by (seed, stream, replicate); the
aggregation is positional, so results are identical for any --jobs value.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import occupancy, percolation, wfsb
from .core import (Params, TOPOLOGY_TORUS, derive_run_seed, floor_gm,
                   k_from_alpha)
from .errors import RangeError

EXPERIMENT_KINDS = ("invasion", "convergence", "threshold_curve",
                    "offspring_test")

# stream ids for derive_run_seed; convergence reserves one stream per M
STREAM_INVASION = 101
STREAM_CONVERGENCE = 200
STREAM_OFFSPRING = 300


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    params: Params
    replicates: int
    generations: int
    seed: int
    M_sequence: tuple = None
    H_list: tuple = None
    seeded_patches: int = 5
    half_width: int = percolation.DESK_HALF_WIDTH
    horizon: int = percolation.DESK_HORIZON
    output: str = None

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise RangeError(f"parameter 'kind': must be one of "
                             f"{EXPERIMENT_KINDS}, got {self.kind!r}")
        if self.replicates < 1:
            raise RangeError(f"parameter 'replicates': must be >= 1, "
                             f"got {self.replicates}")
        if self.generations < 0:
            raise RangeError(f"parameter 'generations': must be >= 0, "
                             f"got {self.generations}")
        if self.kind == "convergence":
            if self.params.alpha is None:
                raise RangeError("parameter 'alpha': required for the "
                                 "convergence experiment")
            if not self.M_sequence:
                raise RangeError("parameter 'M_sequence': required for the "
                                 "convergence experiment")
        if self.kind == "threshold_curve" and not self.H_list:
            raise RangeError("parameter 'H_list': required for the "
                             "threshold_curve experiment")
        if self.kind == "invasion":
            if self.params.topology != TOPOLOGY_TORUS:
                raise RangeError("parameter 'topology': invasion runs on the "
                                 "torus")
            if self.seeded_patches < 1 or self.seeded_patches > self.params.L:
                raise RangeError(
                    f"parameter 'seeded_patches': must lie in "
                    f"[1, {self.params.L}], got {self.seeded_patches}")


def wilson_interval(successes, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion (95% default)."""
    if n <= 0:
        raise RangeError(f"parameter 'n': must be >= 1, got {n}")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _pool_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Invasion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensitySeries:
    """Per-replicate, per-generation type-1 seed densities over the torus.

    `viable` is the headline series (age within the seed-bank depth);
    `raw` additionally counts expired type-1 seeds still in compartments.
    Both are counts divided by L*M.  A viable density of zero is absorbing.
    """
    params: Params
    seed: int
    viable: np.ndarray            # (replicates, generations + 1)
    raw: np.ndarray
    extinction_generation: tuple  # per replicate, None when survived

    @property
    def replicates(self) -> int:
        return self.viable.shape[0]

    @property
    def generations(self) -> int:
        return self.viable.shape[1] - 1

    def survival_frequency(self) -> float:
        return sum(g is None for g in self.extinction_generation) \
            / self.replicates

    def write_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["replicate", "generation", "viable_density",
                         "raw_density"])
        for r in range(self.replicates):
            for g in range(self.generations + 1):
                writer.writerow([r, g, repr(float(self.viable[r, g])),
                                 repr(float(self.raw[r, g]))])

    def write_summary_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["replicate", "extinction_generation", "survived"])
        for r, g in enumerate(self.extinction_generation):
            writer.writerow([r, "" if g is None else g, int(g is None)])


def invasion_initial_state(params: Params, seeded_patches: int):
    """Block of `seeded_patches` patches at the torus center, each holding
    floor(gM) type-1 seeds of age 0."""
    first = (params.L - seeded_patches) // 2
    return wfsb.make_block_state(params, first, seeded_patches,
                                 per_patch=floor_gm(params.g, params.M),
                                 age=0)


def run_invasion(spec: ExperimentSpec, mode="aggregate", jobs=1) \
        -> DensitySeries:
    params, gens = spec.params, spec.generations
    init = invasion_initial_state(params, spec.seeded_patches)
    total = params.L * params.M

    def one(rep):
        run_seed = derive_run_seed(spec.seed, STREAM_INVASION, rep)
        state = init
        viable = np.empty(gens + 1)
        raw = np.empty(gens + 1)
        extinct_at = None
        for g in range(gens + 1):
            v = int(wfsb.viable_type1_census(state).sum())
            viable[g] = v / total
            raw[g] = int(wfsb.type1_census(state).sum()) / total
            if v == 0 and extinct_at is None:
                extinct_at = g
            if g == gens:
                break
            ext = wfsb.sample_extinction_window(params, state, run_seed)
            state = wfsb.wfsb_step(state, params, ext, run_seed, mode=mode)
        return viable, raw, extinct_at

    results = _pool_map(one, range(spec.replicates), jobs)
    return DensitySeries(
        params=params, seed=spec.seed,
        viable=np.stack([r[0] for r in results]),
        raw=np.stack([r[1] for r in results]),
        extinction_generation=tuple(r[2] for r in results))


# ---------------------------------------------------------------------------
# Convergence of the occupancy process to its upper bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    M: int
    k: int
    replicates: int
    clean: int
    fraction: float
    wilson_low: float
    wilson_high: float


@dataclass(frozen=True)
class ConvergenceResult:
    rows: tuple
    generations: int
    seed: int

    def write_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["M", "k", "replicates", "clean", "fraction",
                         "wilson_low", "wilson_high"])
        for row in self.rows:
            writer.writerow([row.M, row.k, row.replicates, row.clean,
                             repr(row.fraction), repr(row.wilson_low),
                             repr(row.wilson_high)])


def convergence_initial_state(params: Params, seed: int, n_occupied=3):
    """Occupied block of age-0 patches with germination fraction g each."""
    occupied = np.ones(n_occupied, dtype=np.int64)
    ages = np.zeros(n_occupied, dtype=np.int64)
    return occupancy.state_from_occupancy_profile(params, occupied, ages,
                                                  seed, i_min=0)


def run_convergence(spec: ExperimentSpec, mode="aggregate", jobs=1,
                    n_occupied=3) -> ConvergenceResult:
    rows = []
    for m_index, M in enumerate(spec.M_sequence):
        params = replace(spec.params, M=int(M),
                         k=k_from_alpha(int(M), spec.params.alpha))

        def one(rep, params=params, m_index=m_index):
            run_seed = derive_run_seed(spec.seed,
                                       STREAM_CONVERGENCE + m_index, rep)
            init = convergence_initial_state(params, run_seed, n_occupied)
            run = occupancy.coupled_run(params, init, spec.generations,
                                        run_seed, mode=mode)
            return run.report.clean

        outcomes = _pool_map(one, range(spec.replicates), jobs)
        clean = sum(outcomes)
        lo, hi = wilson_interval(clean, spec.replicates)
        rows.append(ConvergenceRow(
            M=int(M), k=params.k, replicates=spec.replicates, clean=clean,
            fraction=clean / spec.replicates, wilson_low=lo, wilson_high=hi))
    return ConvergenceResult(rows=tuple(rows), generations=spec.generations,
                             seed=spec.seed)


# ---------------------------------------------------------------------------
# Threshold curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdCurve:
    rows: tuple          # (H, estimate) sorted by H
    half_width: int
    horizon: int
    seed: int

    @property
    def monotone(self) -> bool:
        ests = [e for _, e in self.rows]
        return all(a <= b for a, b in zip(ests, ests[1:]))

    def write_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["H", "p_crit_estimate", "half_width", "horizon",
                         "seed"])
        for H, est in self.rows:
            writer.writerow([H, f"{est:.10g}", self.half_width, self.horizon,
                             self.seed])


def run_threshold_curve(spec: ExperimentSpec, jobs=1) -> ThresholdCurve:
    """One scan per H.  All scans share the seed, hence the same uniforms;
    the open sets are then nested across both p and H, which makes the
    estimates non-decreasing in H by construction."""
    def one(H):
        config = percolation.PercConfig(
            H=int(H), half_width=spec.half_width, horizon=spec.horizon,
            seed=spec.seed)
        return int(H), percolation.pcrit_scan(config).estimate

    rows = sorted(_pool_map(one, spec.H_list, jobs))
    return ThresholdCurve(rows=tuple(rows), half_width=spec.half_width,
                          horizon=spec.horizon, seed=spec.seed)


# ---------------------------------------------------------------------------
# Offspring law goodness of fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OffspringReport:
    law: wfsb.OffspringLaw
    counts: np.ndarray
    chi2: float
    dof: int
    p_value: float
    tv_distance: float
    competition_mean: float
    competition_se: float
    competition_replicates: int

    @property
    def competition_z(self) -> float:
        return (self.competition_mean - 1.0) / self.competition_se

    def write_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["count", "pmf", "observed", "expected"])
        n = len(self.counts)
        for value, prob in zip(self.law.support, self.law.pmf):
            observed = int(np.sum(self.counts == value))
            writer.writerow([value, repr(float(prob)), observed,
                             repr(float(n * prob))])

    def write_summary_csv(self, fileobj, fingerprint=""):
        if fingerprint:
            fileobj.write(f"# config_fingerprint={fingerprint}\n")
        writer = csv.writer(fileobj, lineterminator="\n")
        writer.writerow(["chi2", "dof", "p_value", "tv_distance",
                         "competition_mean", "competition_se",
                         "competition_replicates"])
        writer.writerow([repr(self.chi2), self.dof, repr(self.p_value),
                         repr(self.tv_distance), repr(self.competition_mean),
                         repr(self.competition_se),
                         self.competition_replicates])


def _merged_chi_square(counts, law, min_expected=5.0):
    """Chi-square GOF with tail bins merged up to the usual expectation
    floor.  The null is fully specified, so dof = bins - 1."""
    n = len(counts)
    observed = np.array([np.sum(counts == v) for v in law.support],
                        dtype=float)
    expected = n * np.asarray(law.pmf)
    # merge from the right tail until every bin is heavy enough
    while len(expected) > 2 and expected[-1] < min_expected:
        expected[-2] += expected[-1]
        observed[-2] += observed[-1]
        expected = expected[:-1]
        observed = observed[:-1]
    # guard the left tail too (tiny-M laws can be skewed)
    while len(expected) > 2 and expected[0] < min_expected:
        expected[1] += expected[0]
        observed[1] += observed[0]
        expected = expected[1:]
        observed = observed[1:]
    expected *= observed.sum() / expected.sum()
    chi2, p_value = stats.chisquare(observed, expected)
    return float(chi2), len(expected) - 1, float(p_value)


def tv_distance(counts, law) -> float:
    n = len(counts)
    emp = np.array([np.sum(counts == v) for v in law.support]) / n
    extra = 1.0 - emp.sum()         # mass outside the law's support, if any
    return 0.5 * float(np.abs(emp - law.pmf).sum() + extra)


def run_offspring_test(spec: ExperimentSpec, competition_replicates=None) \
        -> OffspringReport:
    """Offspring counts of one isolated plant vs the analytic law, plus the
    mean-one check under maximal competition.  Extinction plays no role in
    either law, so p is forced to 0 for the sampling params."""
    params = replace(spec.params, p=0.0)
    if competition_replicates is None:
        competition_replicates = spec.replicates
    law = wfsb.isolated_offspring_law(params)
    counts = wfsb.sample_offspring_counts(
        params, spec.replicates, derive_run_seed(spec.seed,
                                                 STREAM_OFFSPRING, 0))
    chi2, dof, p_value = _merged_chi_square(counts, law)
    tv = tv_distance(counts, law)

    comp = wfsb.sample_offspring_counts(
        params, competition_replicates,
        derive_run_seed(spec.seed, STREAM_OFFSPRING, 1), competition=True)
    mean = float(comp.mean())
    se = float(comp.std(ddof=1)) / math.sqrt(len(comp))
    return OffspringReport(
        law=law, counts=counts, chi2=chi2, dof=dof, p_value=p_value,
        tv_distance=tv, competition_mean=mean, competition_se=se,
        competition_replicates=competition_replicates)

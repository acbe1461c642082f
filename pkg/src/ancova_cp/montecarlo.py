"""Monte Carlo estimators of the coverage probability of the selected interval.

Two estimators of the same quantity: the naive one averages raw coverage
indicators of simulated two-stage fits, the conditioned one averages the
closed-form conditional coverage given the slope estimate and residual
scale, which never has larger variance.

Randomness is organized as counter-based Philox streams keyed by
(seed, hash of estimator tag and point, chunk index).  Runs are split into
fixed-size chunks, each chunk draws from its own stream, and chunk partial
sums are merged in chunk order, so results are bit-identical whether chunks
run serially or on a thread pool, and are fully determined by
(seed, runs, point, chunk size).

True intercepts are fixed to zero internally: on every draw the coverage
indicator is a function of the estimation noise, the true slopes and the
residual scale only, so intercepts cannot change any estimate.  The
``intercepts`` override on the estimators exists for tests that pin down
exactly that invariance.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .conditional import ConditionalKernel
from .design import GeometryBundle, TwoStageConfig
from .errors import DomainError
from .selection import ScaledSufficientStats, _batch_f, batch_events

__all__ = [
    "CHUNK_SIZE",
    "SlopePoint",
    "CoverageEstimate",
    "default_workers",
    "sample_stats",
    "estimate_naive",
    "estimate_conditioned",
    "gate_probability",
    "event_probabilities",
]

CHUNK_SIZE = 8192
THREADS_ENV_VAR = "ANCOVA_CP_THREADS"

# chi-square draws: sum of squared normals at small df, gamma sampling above
_CHI2_SUMSQ_MAX_DF = 64


@dataclass(frozen=True)
class SlopePoint:
    """A point in the scaled slope space (true slopes divided by sigma)."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0 or not all(math.isfinite(v) for v in self.values):
            raise DomainError(f"slope point must be nonempty and finite, got {self.values}")

    @classmethod
    def of(cls, values) -> "SlopePoint":
        return cls(values=tuple(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class CoverageEstimate:
    """A coverage (or gate) probability estimate with its reproducibility key."""

    estimate: float
    se: float
    runs: int
    estimator: str
    seed: int
    point: SlopePoint


def default_workers() -> int:
    """Worker count for chunk and grid fan-out, from ANCOVA_CP_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_map(fn, items, n_jobs):
    if n_jobs is None:
        n_jobs = default_workers()
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _chunk_sizes(runs: int) -> list[int]:
    full, rem = divmod(runs, CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rem] if rem else [])


def _stream(seed: int, tag: str, point: np.ndarray, chunk: int) -> np.random.Generator:
    """Philox generator for one chunk of one estimation task."""
    digest = hashlib.blake2b(tag.encode("ascii") + point.tobytes(), digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(key, chunk))
    return np.random.Generator(np.random.Philox(seq))


def _check_common(point, geom, seed, runs, a):
    if not isinstance(point, SlopePoint):
        point = SlopePoint.of(point)
    slopes = point.as_array()
    if slopes.shape != (geom.k,):
        raise DomainError(f"slope point must have length {geom.k}, got {slopes.shape}")
    if not (isinstance(seed, int) and seed >= 0):
        raise DomainError(f"seed must be a non-negative integer, got {seed!r}")
    if runs < 1:
        raise DomainError(f"runs must be at least 1, got {runs}")
    if a is not None and not np.array_equal(np.asarray(a, dtype=float), geom.a):
        raise DomainError("contrast does not match the one the geometry was built with")
    return point, slopes


def _check_intercepts(intercepts, k):
    if intercepts is None:
        return
    arr = np.asarray(intercepts, dtype=float)
    if arr.shape != (k,) or not np.all(np.isfinite(arr)):
        raise DomainError(f"intercept override must be {k} finite values, got {intercepts!r}")


def _chi2(rng: np.random.Generator, df: int, n: int) -> np.ndarray:
    if df <= _CHI2_SUMSQ_MAX_DF:
        z = rng.standard_normal((n, df))
        return np.einsum("ij,ij->i", z, z)
    return 2.0 * rng.standard_gamma(0.5 * df, size=n)


def sample_stats(
    point: SlopePoint, geom: GeometryBundle, rng: np.random.Generator, intercepts=None
) -> ScaledSufficientStats:
    """One draw of the scaled sufficient statistics at a true slope point.

    gamma_hat = gamma + L z with L the Cholesky factor of (X'X)^-1 and
    z standard normal, then d drawn as a chi-square with m degrees of
    freedom (sum of squares of m normals for m <= 64, gamma sampling
    above).  The intercept block of gamma is zero unless overridden.
    """
    point, slopes = _check_common(point, geom, 0, 1, None)
    _check_intercepts(intercepts, geom.k)
    inter = np.zeros(geom.k) if intercepts is None else np.asarray(intercepts, dtype=float)
    gamma = np.concatenate([inter, slopes])
    delta = geom.noise_chol @ rng.standard_normal(2 * geom.k)
    d = float(_chi2(rng, geom.m, 1)[0])
    return ScaledSufficientStats.from_gamma_hat(gamma + delta, d)


def estimate_naive(
    point,
    geom: GeometryBundle,
    cfg: TwoStageConfig,
    a=None,
    runs: int = 10_000,
    seed: int = 0,
    intercepts=None,
    n_jobs=None,
) -> CoverageEstimate:
    """Average of raw coverage indicators over simulated two-stage fits.

    The standard error is the binomial one, sqrt(p(1-p)/runs).  The result
    depends only on (seed, runs, point, chunk size); ``intercepts`` is
    validated but cannot move the estimate, because each indicator is a
    function of the noise, the true slopes and d alone.
    """
    point, slopes = _check_common(point, geom, seed, runs, a)
    _check_intercepts(intercepts, geom.k)

    def run_chunk(job):
        chunk, size = job
        rng = _stream(seed, "naive", slopes, chunk)
        delta = rng.standard_normal((size, 2 * geom.k)) @ geom.noise_chol.T
        d = _chi2(rng, geom.m, size)
        ev = batch_events(delta, d, slopes, geom, cfg)
        covered = np.where(ev.in_a, ev.covers_tau, np.where(ev.in_b, ev.covers_xi, ev.covers_full))
        return int(covered.sum())

    totals = _parallel_map(run_chunk, list(enumerate(_chunk_sizes(runs))), n_jobs)
    hits = 0
    for t in totals:
        hits += t
    p_hat = hits / runs
    se = math.sqrt(p_hat * (1.0 - p_hat) / runs)
    return CoverageEstimate(p_hat, se, runs, "naive", seed, point)


def estimate_conditioned(
    point,
    geom: GeometryBundle,
    cfg: TwoStageConfig,
    a=None,
    runs: int = 10_000,
    seed: int = 0,
    intercepts=None,
    n_jobs=None,
) -> CoverageEstimate:
    """Average of conditional coverage values over draws of (q, d).

    q is drawn from its marginal N(true slopes, V22) and d as a chi-square
    with m degrees of freedom.  The standard error is the unbiased sample
    standard deviation of the per-draw values divided by sqrt(runs).
    """
    point, slopes = _check_common(point, geom, seed, runs, a)
    _check_intercepts(intercepts, geom.k)
    kernel = ConditionalKernel(geom, cfg, slopes)

    def run_chunk(job):
        chunk, size = job
        rng = _stream(seed, "conditioned", slopes, chunk)
        q = slopes + rng.standard_normal((size, geom.k)) @ geom.v22_chol.T
        d = _chi2(rng, geom.m, size)
        p = kernel.conditional_cp_batch(q, d)
        return float(p.sum()), float((p * p).sum())

    partials = _parallel_map(run_chunk, list(enumerate(_chunk_sizes(runs))), n_jobs)
    s1 = 0.0
    s2 = 0.0
    for p1, p2 in partials:
        s1 += p1
        s2 += p2
    mean = s1 / runs
    if runs > 1:
        var = max(0.0, (s2 - s1 * s1 / runs) / (runs - 1))
        se = math.sqrt(var / runs)
    else:
        se = 0.0
    return CoverageEstimate(mean, se, runs, "conditioned", seed, point)


def gate_probability(
    point,
    geom: GeometryBundle,
    cfg: TwoStageConfig,
    which: str = "tau",
    runs: int = 10_000,
    seed: int = 0,
    n_jobs=None,
) -> CoverageEstimate:
    """Monte Carlo estimate of Pr(F <= cutoff) for one of the two selection tests.

    ``which`` is "tau" for the all-slopes-zero test, "xi" for the equal-
    slopes test.  Used as a diagnostic for search region restrictions, which
    rely on the relevant test rejecting with probability close to one on the
    region boundary.
    """
    if which not in ("tau", "xi"):
        raise DomainError(f'which must be "tau" or "xi", got {which!r}')
    point, slopes = _check_common(point, geom, seed, runs, None)

    def run_chunk(job):
        chunk, size = job
        rng = _stream(seed, f"gate_{which}", slopes, chunk)
        q = slopes + rng.standard_normal((size, geom.k)) @ geom.v22_chol.T
        d = _chi2(rng, geom.m, size)
        f_tau, f_xi, _, _ = _batch_f(q, d, geom)
        accepted = f_tau <= cfg.l_tau if which == "tau" else f_xi <= cfg.l_xi
        return int(accepted.sum())

    totals = _parallel_map(run_chunk, list(enumerate(_chunk_sizes(runs))), n_jobs)
    hits = 0
    for t in totals:
        hits += t
    p_hat = hits / runs
    se = math.sqrt(p_hat * (1.0 - p_hat) / runs)
    return CoverageEstimate(p_hat, se, runs, f"gate_{which}", seed, point)


def event_probabilities(
    point, geom: GeometryBundle, cfg: TwoStageConfig, runs: int = 10_000, seed: int = 0
) -> dict:
    """Joint frequencies of the zero-slopes coverage event and the first-stage gate.

    Returns the empirical probabilities of S = {zero-slopes interval covers},
    of S intersected with the acceptance event of the first test, and of the
    first test rejecting, all from common draws.  Supports bound checks of
    the form 0 <= Pr(S) - Pr(S and accept) <= Pr(reject).
    """
    point, slopes = _check_common(point, geom, seed, runs, None)
    hits_s = 0
    hits_s_and_a = 0
    hits_reject = 0
    for chunk, size in enumerate(_chunk_sizes(runs)):
        rng = _stream(seed, "events", slopes, chunk)
        delta = rng.standard_normal((size, 2 * geom.k)) @ geom.noise_chol.T
        d = _chi2(rng, geom.m, size)
        ev = batch_events(delta, d, slopes, geom, cfg)
        hits_s += int(ev.covers_tau.sum())
        hits_s_and_a += int((ev.covers_tau & ev.in_a).sum())
        hits_reject += int((~ev.in_a).sum())
    return {
        "covers_tau": hits_s / runs,
        "covers_tau_and_accept": hits_s_and_a / runs,
        "reject_tau": hits_reject / runs,
        "runs": runs,
    }

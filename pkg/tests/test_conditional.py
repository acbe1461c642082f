import dataclasses
import math

import mpmath
import numpy as np
import pytest

from ancova_cp import ConditionalKernel, DomainError, ScaledSufficientStats, phi, select_region
from oracles import conditional_coverage_mc

N_DRAWS = 100_000


def _region_of(geom, cfg, q, d):
    stats = ScaledSufficientStats.from_gamma_hat(np.concatenate([np.zeros(geom.k), q]), d)
    return select_region(stats, geom, cfg).region


# ---------------------------------------------------------------------------
# closed form versus conditional resampling, one case per region
# ---------------------------------------------------------------------------


def test_p_tau_matches_conditional_brute_force(ref):
    _, _, geom, cfg = ref
    slopes = np.array([0.05, 0.1, 0.0])
    q = np.array([0.01, -0.02, 0.015])
    d = 18.0
    assert _region_of(geom, cfg, q, d) == "A"
    kernel = ConditionalKernel(geom, cfg, slopes)
    want, se = conditional_coverage_mc(geom, cfg, slopes, q, d, "tau", N_DRAWS, seed=101)
    assert kernel.p_tau(q, d) == pytest.approx(want, abs=3 * se + 1e-4)
    assert kernel.conditional_cp(q, d) == kernel.p_tau(q, d)
    assert kernel.p_xi(q, d) == 0.0
    assert kernel.p_full(q, d) == 0.0


def test_p_xi_matches_conditional_brute_force(ref):
    _, _, geom, cfg = ref
    slopes = np.array([0.05, 0.1, 0.0])
    q = np.array([1.0, 1.02, 0.98])
    d = 18.0
    assert _region_of(geom, cfg, q, d) == "B"
    kernel = ConditionalKernel(geom, cfg, slopes)
    want, se = conditional_coverage_mc(geom, cfg, slopes, q, d, "xi", N_DRAWS, seed=102)
    assert kernel.p_xi(q, d) == pytest.approx(want, abs=3 * se + 1e-4)
    assert kernel.conditional_cp(q, d) == kernel.p_xi(q, d)
    assert kernel.p_tau(q, d) == 0.0
    assert kernel.p_full(q, d) == 0.0


def test_p_full_matches_conditional_brute_force(ref):
    _, _, geom, cfg = ref
    slopes = np.array([0.05, 0.1, 0.0])
    q = np.array([2.0, -1.0, 0.5])
    d = 18.0
    assert _region_of(geom, cfg, q, d) == "C"
    kernel = ConditionalKernel(geom, cfg, slopes)
    want, se = conditional_coverage_mc(geom, cfg, slopes, q, d, "full", N_DRAWS, seed=103)
    assert kernel.p_full(q, d) == pytest.approx(want, abs=3 * se + 1e-4)
    assert kernel.conditional_cp(q, d) == kernel.p_full(q, d)
    assert kernel.p_tau(q, d) == 0.0
    assert kernel.p_xi(q, d) == 0.0


# ---------------------------------------------------------------------------
# symmetric closed forms
# ---------------------------------------------------------------------------


def test_p_tau_symmetric_case(ref):
    _, _, geom, cfg = ref
    kernel = ConditionalKernel(geom, cfg, np.zeros(3))
    d = 18.0
    e = cfg.t_mk * math.sqrt(d / (geom.m + geom.k)) * math.sqrt(geom.v_star)
    want = 2.0 * float(phi(e / math.sqrt(geom.v_star))) - 1.0
    assert kernel.p_tau(np.zeros(3), d) == pytest.approx(want, abs=1e-12)


def test_p_xi_symmetric_case(ref):
    _, _, geom, cfg = ref
    slopes = np.array([0.8, 0.8, 0.8])
    d = 10.0
    assert _region_of(geom, cfg, slopes, d) == "B"
    kernel = ConditionalKernel(geom, cfg, slopes)
    e = cfg.t_mk1 * math.sqrt(d / (geom.m + geom.k - 1)) * math.sqrt(geom.w_star)
    want = 2.0 * float(phi(e / math.sqrt(geom.w_cond))) - 1.0
    assert kernel.p_xi(slopes, d) == pytest.approx(want, abs=1e-12)


def test_p_full_symmetric_case(ref):
    _, _, geom, cfg = ref
    slopes = np.array([2.0, -1.0, 0.5])
    d = 18.0
    assert _region_of(geom, cfg, slopes, d) == "C"
    kernel = ConditionalKernel(geom, cfg, slopes)
    e = cfg.t_m * math.sqrt(d / geom.m) * math.sqrt(geom.v11)
    want = 2.0 * float(phi(e / math.sqrt(geom.v_star))) - 1.0
    assert kernel.p_full(slopes, d) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def test_exactly_one_branch_active(ref):
    _, _, geom, cfg = ref
    kernel = ConditionalKernel(geom, cfg, np.array([0.05, 0.1, 0.0]))
    rng = np.random.default_rng(9)
    for _ in range(200):
        q = rng.uniform(-1.5, 1.5, 3)
        d = float(rng.chisquare(geom.m))
        parts = [kernel.p_tau(q, d), kernel.p_xi(q, d), kernel.p_full(q, d)]
        total = kernel.conditional_cp(q, d)
        assert 0.0 <= total <= 1.0
        assert sum(parts) == pytest.approx(total, abs=1e-15)
        assert sum(1 for p in parts if p > 0.0) <= 1


def test_always_full_when_cutoffs_zero(ref):
    _, _, geom, cfg = ref
    forced = dataclasses.replace(cfg, l_tau=0.0, l_xi=0.0)
    kernel = ConditionalKernel(geom, forced, np.array([0.05, 0.1, 0.0]))
    rng = np.random.default_rng(13)
    for _ in range(50):
        q = rng.uniform(-1.0, 1.0, 3)
        d = float(rng.chisquare(geom.m))
        # the other two branches are never consulted; p_full itself can
        # underflow to zero when q is far from the true slopes
        assert kernel.conditional_cp(q, d) == kernel.p_full(q, d)
        assert kernel.p_tau(q, d) == 0.0
        assert kernel.p_xi(q, d) == 0.0


def test_batch_matches_scalar(ref):
    _, _, geom, cfg = ref
    kernel = ConditionalKernel(geom, cfg, np.array([0.05, 0.1, 0.0]))
    rng = np.random.default_rng(29)
    q = rng.uniform(-1.5, 1.5, (300, 3))
    d = rng.chisquare(geom.m, 300)
    batch = kernel.conditional_cp_batch(q, d)
    # blocked matrix products round differently than single-row ones, so
    # agreement is to tight float tolerance, not bit equality
    for r in range(300):
        assert batch[r] == pytest.approx(kernel.conditional_cp(q[r], float(d[r])), abs=5e-13)


def test_kernel_validation(ref):
    _, _, geom, cfg = ref
    with pytest.raises(DomainError):
        ConditionalKernel(geom, cfg, np.zeros(4))
    kernel = ConditionalKernel(geom, cfg, np.zeros(3))
    with pytest.raises(DomainError):
        kernel.p_tau(np.zeros(3), 0.0)
    with pytest.raises(DomainError):
        kernel.conditional_cp(np.zeros(3), -2.0)
    with pytest.raises(DomainError):
        kernel.p_full(np.zeros(2), 1.0)


def test_phi_accuracy():
    assert phi(0.0) == 0.5
    for x in (-10.0, -5.0, -1.96, -0.5, 0.5, 1.96, 5.0, 10.0):
        assert float(phi(x)) == pytest.approx(float(mpmath.ncdf(x)), abs=1e-13)
    arr = phi(np.array([-1.0, 0.0, 1.0]))
    assert arr.shape == (3,)
    assert arr[0] + arr[2] == pytest.approx(1.0, abs=1e-15)

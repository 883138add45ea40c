"""Acceptance checks, one test per criterion, at the stated tolerances.

The terminal summary prints a PASS/FAIL line for each test in this file.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from partvar import estimators as est
from partvar.cli import main
from partvar.designs import (
    BernoulliDesign,
    ClusterBernoulliDesign,
    PoissonDesign,
    SrsworDesign,
    dependence_matrices,
)
from partvar.model import DependenceMatrix, PopulationSpec, SampleCounts
from partvar.verify import (
    bias_report,
    c_from_moments,
    collapsed_outcomes,
    covariance_identity_check,
    exact_count_moments,
    exact_unbiasedness_check,
    run_monte_carlo,
)

from . import oracles

BATCH = [2, 2, 2]
CONCS = [0.0, 0.5, 1.0]
POP_UNEQUAL = PopulationSpec.from_arrays(BATCH, [1.0, 2.0, 3.0], CONCS)
POP_EQUAL = PopulationSpec.from_arrays(BATCH, [1.0, 1.0, 1.0], CONCS)
SRSWOR3 = SrsworDesign(3)


def _exact_expectation(outcomes, fn):
    return sum(p * fn(n) for n, p in outcomes)


def test_count_covariance_identity_exact():
    t0 = time.perf_counter()
    counts, _ = collapsed_outcomes(SRSWOR3, POP_UNEQUAL)
    e1, e2 = exact_count_moments(SRSWOR3, POP_UNEQUAL)
    _, C = dependence_matrices(SRSWOR3, POP_UNEQUAL)
    elapsed = time.perf_counter() - t0

    outcomes = oracles.enumerate_srswor(BATCH, 3)
    assert len(outcomes) == 20
    r1, r2 = oracles.exact_moments(outcomes)
    np.testing.assert_allclose(e2, [[float(v) for v in row] for row in r2], rtol=0, atol=1e-12)

    lhs = e2 - np.outer(e1, e1)
    rhs = np.diag(e1) - C.values * np.outer(e1, e1)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12
    assert elapsed < 1.0


def test_dependence_matrix_conversion_exact():
    t0 = time.perf_counter()
    e1, e2 = exact_count_moments(SRSWOR3, POP_UNEQUAL)
    from_moments = c_from_moments(e1, e2)
    cprime, _ = dependence_matrices(SRSWOR3, POP_UNEQUAL)
    elapsed = time.perf_counter() - t0

    cp = cprime.values
    nb = POP_UNEQUAL.batch_counts
    converted = cp + np.diag((1.0 - np.diag(cp)) / nb)
    assert np.max(np.abs(from_moments - converted)) <= 1e-12
    # and against exact rational arithmetic: C' = 1/5 everywhere, C_ii = 1/5 + (4/5)/2
    expected = np.full((3, 3), 0.2)
    np.fill_diagonal(expected, 0.6)
    assert np.max(np.abs(from_moments - expected)) <= 1e-12
    assert elapsed < 1.0


def test_syg_exactly_unbiased_fixed_size_equal_masses():
    t0 = time.perf_counter()
    r = exact_unbiasedness_check(SRSWOR3, POP_EQUAL, "SYG")
    elapsed = time.perf_counter() - t0

    outcomes = oracles.enumerate_srswor(BATCH, 3)
    cp = [[Fraction(1, 5)] * 3] * 3
    ref_mean = _exact_expectation(outcomes, lambda n: oracles.syg(n, [1, 1, 1], CONCS, cp))
    ref_var = oracles.exact_var_theta(outcomes, [1, 1, 1], CONCS)
    assert ref_mean == ref_var  # the oracle agrees exactly in rationals
    assert r.exact_variance == pytest.approx(float(ref_var), rel=1e-14)
    assert abs(r.relative_bias) <= 1e-10
    assert elapsed < 1.0


def test_finite_ht_exactly_unbiased_constant_sample_mass():
    t0 = time.perf_counter()
    r = exact_unbiasedness_check(SRSWOR3, POP_EQUAL, "HT_FINITE")
    simplified = exact_unbiasedness_check(SRSWOR3, POP_EQUAL, "HT")
    elapsed = time.perf_counter() - t0
    assert abs(r.relative_bias) <= 1e-10
    assert elapsed < 1.0

    # The simplified HT drops the finite-batch term. Its bias equals
    # (M_sample / M_batch) * E[sum_i N_i (m_i c_i)^2] / M_sample^2 exactly.
    outcomes = oracles.enumerate_srswor(BATCH, 3)
    m_s, m_b = 3, 6
    second = _exact_expectation(outcomes, lambda n: sum(ni * Fraction(ci) ** 2 for ni, ci in zip(n, CONCS)) / m_s**2)
    bias = Fraction(m_s, m_b) * second
    assert simplified.absolute_bias == pytest.approx(float(bias), rel=1e-10)
    # frozen regression value of the simplified form's relative bias
    assert simplified.relative_bias == pytest.approx(25 / 12, rel=1e-10)


MASS_VARIANCE_CASES = {
    "srswor-equal": (SRSWOR3, POP_EQUAL),
    "srswor-unequal": (SRSWOR3, POP_UNEQUAL),
    "bernoulli": (BernoulliDesign(0.4), POP_UNEQUAL),
    "cluster": (ClusterBernoulliDesign(0.5, size=2), POP_UNEQUAL),
}


def test_mass_variance_estimator_exactly_unbiased():
    failures = []
    for label, (design, pop) in MASS_VARIANCE_CASES.items():
        r = exact_unbiasedness_check(design, pop, "VARM")
        assert r.variant == "eq1"
        counts, p = collapsed_outcomes(design, pop)
        outcomes = [(list(map(int, n)), Fraction(q)) for n, q in zip(counts, p)]
        ref_var = float(oracles.exact_var_mass(outcomes, pop.masses))
        assert r.exact_variance == pytest.approx(ref_var, rel=1e-12, abs=1e-12)
        if r.exact_variance > 0:
            err = abs(r.expected_estimate / r.exact_variance - 1.0)
        else:
            err = abs(r.expected_estimate)
        if err > 1e-10:
            failures.append(f"{label}: E[estimate]={r.expected_estimate:.6g} Var(M)={r.exact_variance:.6g}")
    assert not failures, "; ".join(failures)


def test_monte_carlo_t1_consistency_poisson():
    t0 = time.perf_counter()
    pop = PopulationSpec.from_arrays([0, 0], [1.0, 1.0], [1.0, 0.0])
    design = PoissonDesign((50.0, 50.0))
    C = DependenceMatrix.zeros(2)
    records = run_monte_carlo(design, pop, C, 200_000, seed=12345)
    rep = bias_report(records)
    cov = covariance_identity_check(records, C, pop, design)
    elapsed = time.perf_counter() - t0

    t1 = rep["T1"]
    print(f"T1 mean={t1.mean:.6g} var_theta={rep.var_theta:.6g} z={t1.z:.3f} cov max|z|={cov.max_abs_z:.3f}")
    assert abs(t1.z) <= 4
    assert cov.status == "pass"
    assert elapsed < 60


def test_hand_value_regression():
    N, m, c = [50, 50], [1, 1], [1, 0]
    s = SampleCounts.from_arrays(N, m, c)
    zero = DependenceMatrix.zeros(2)
    hundredth = DependenceMatrix.uniform(2, 0.01)
    c0 = [[0, 0], [0, 0]]
    c1 = [[Fraction(1, 100)] * 2] * 2

    ref = {
        "T1": oracles.t1(N, m, c, c0),
        "HT": oracles.ht(N, m, c, c0),
        "T2": oracles.eq7_expanded(*oracles.moments(N, m, c, c0)),
        "SYG": oracles.syg(N, m, c, c1),
        "AD1": oracles.t1(N, m, c, c1, weighted=True),
    }
    assert ref["T1"] == Fraction(1, 400) and ref["HT"] == Fraction(1, 200)
    assert ref["T2"] == Fraction(2525, 10**6)
    assert ref["SYG"] == ref["AD1"] == Fraction(1, 396)
    got = {
        "T1": est.v_t1(s, zero),
        "HT": est.v_ht(s, zero),
        "T2": est.v_t2(s, zero),
        "SYG": est.v_syg(s, hundredth),
        "AD1": est.v_ad1(s, hundredth),
    }
    for name in ref:
        assert got[name] == pytest.approx(float(ref[name]), rel=1e-12, abs=0), name

    # rsd = 10/100, a = 1 - exp(-2)
    a = -math.expm1(-2.0)
    hyb_ref = a * 0.0025 + (1 - a) * 0.005
    assert est.v_hyb(s, zero, 0.05) == pytest.approx(hyb_ref, rel=1e-12)
    assert round(hyb_ref, 7) == 0.0028383


def _instances(seed, n, **kw):
    rng = np.random.default_rng(seed)
    return [oracles.random_instance(rng, **kw) for _ in range(n)], rng


def _values(N, m, c, C, xs=(0.05,)):
    rep = est.estimate_all(SampleCounts.from_arrays(N, m, c), DependenceMatrix(C), xs)
    return rep.values()


def _scale(N, m):
    """Natural size of a theta variance for this sample; used as an absolute floor."""
    N = np.asarray(N, dtype=float)
    return float(np.sum(N * m**2) / np.sum(N * m) ** 2)


def _close(a, b, scale, rel=1e-9):
    if a is None or b is None:
        return a is b
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12 * scale)


THETA_ESTIMATORS = ("T1", "T2", "HT", "AD1", "AD2", "SYG", "HYB05")


def test_reduction_and_invariance_properties():
    t0 = time.perf_counter()
    n = 1000

    # C = 0 reductions
    insts, _ = _instances(1, n)
    for N, m, c, _ in insts:
        v = _values(N, m, c, np.zeros((len(N), len(N))))
        assert _close(v["AD1"], v["T1"], _scale(N, m), rel=1e-12)
        assert _close(v["AD2"], v["T2"], _scale(N, m), rel=1e-12)
        assert v["SYG"] == 0.0

    # mass-scale invariance
    insts, rng = _instances(2, n)
    for N, m, c, C in insts:
        k = 10.0 ** rng.uniform(-3, 3)
        a, b = _values(N, m, c, C), _values(N, m * k, c, C)
        for name in THETA_ESTIMATORS:
            assert _close(a[name], b[name], _scale(N, m)), name

    # shift invariance of T1 and AD1
    insts, rng = _instances(3, n)
    for N, m, c, C in insts:
        d = rng.uniform(-0.5, 0.5)
        a, b = _values(N, m, c, C), _values(N, m, c + d, C)
        for name in ("T1", "AD1"):
            assert _close(a[name], b[name], _scale(N, m), rel=1e-8), name

    # hybrid is a convex combination of T1 and HT
    insts, _ = _instances(4, n)
    for N, m, c, C in insts:
        v = _values(N, m, c, C, xs=(0.01, 0.05, 0.2))
        lo, hi = sorted((v["T1"], v["HT"]))
        tol = 1e-12 * (max(abs(lo), abs(hi)) + _scale(N, m))
        for name in ("HYB01", "HYB05", "HYB20"):
            assert lo - tol <= v[name] <= hi + tol

    # permutation invariance
    insts, rng = _instances(5, n)
    for N, m, c, C in insts:
        p = rng.permutation(len(N))
        a, b = _values(N, m, c, C), _values(N[p], m[p], c[p], C[np.ix_(p, p)])
        for name in THETA_ESTIMATORS:
            assert _close(a[name], b[name], _scale(N, m), rel=1e-10), name

    # SYG is non-negative for C in [0, 1)
    insts, _ = _instances(6, n, c_low=0.0, c_high=0.999)
    for N, m, c, C in insts:
        assert _values(N, m, c, C)["SYG"] >= 0.0

    assert time.perf_counter() - t0 < 30


def test_second_order_taylor_matches_expanded_formula():
    rng = np.random.default_rng(99)
    checked = 0
    while checked < 1000:
        N, m, c, C = oracles.random_instance(rng, c_low=-0.02, c_high=0.02)
        em, ea, vm, va, cv = oracles.moments(N, m, c, C)
        if vm <= 0 or ea == 0:
            continue
        # the expanded formula is evaluated in exact rationals
        ref = oracles.eq7_expanded(em, ea, vm, va, cv)
        got = est.v_t2(SampleCounts.from_arrays(N, m, c), DependenceMatrix(C))
        if ref == 0:
            # relative error is undefined; only rounding noise is allowed
            assert abs(got) <= 1e-12 * _scale(N, m)
            continue
        assert got == pytest.approx(float(ref), rel=1e-10, abs=0)
        checked += 1


def test_simulate_reports_byte_identical(tmp_path):
    pop = tmp_path / "pop.csv"
    pop.write_text("kind,mass_g,conc,count_batch\n1,1.0,0.0,40\n2,2.0,0.5,30\n3,3.0,1.0,30\n")
    base = ["simulate", "--population", str(pop), "--design", "bernoulli:k=0.1", "--reps", "10000", "--seed", "42"]
    outs = []
    for i, workers in enumerate((1, 1, 4)):
        out = tmp_path / f"r{i}.json"
        assert main(base + ["--workers", str(workers), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]

import json
import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from partvar import _kernels
from partvar import estimators as est
from partvar.designs import BernoulliDesign, ClusterBernoulliDesign, PoissonDesign, SrsworDesign, format_design, parse_design
from partvar.io import dumps_report
from partvar.model import DependenceMatrix, SampleCounts

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def samples(draw, max_kinds=5, c_range=(-0.05, 0.05)):
    T = draw(st.integers(1, max_kinds))
    N = draw(arrays(np.int64, T, elements=st.integers(0, 60)))
    assume(N.sum() > 0)
    m = draw(arrays(np.float64, T, elements=st.floats(0.05, 20.0, **finite)))
    c = draw(arrays(np.float64, T, elements=st.floats(0.0, 1.0, **finite)))
    a = draw(arrays(np.float64, (T, T), elements=st.floats(*c_range, **finite)))
    C = np.triu(a) + np.triu(a, 1).T
    return SampleCounts.from_arrays(N, m, c), DependenceMatrix(C)


@given(samples())
def test_independent_selection_gives_nonnegative_t1_and_ht(data):
    s, _ = data
    zero = DependenceMatrix.zeros(s.n_kinds)
    assert est.v_t1(s, zero) >= 0
    assert est.v_ht(s, zero) >= 0
    assert est.var_m_hat(s, zero) > 0


@given(samples())
def test_estimate_all_only_raises_on_empty(data):
    s, C = data
    rep = est.estimate_all(s, C)
    for r in rep.estimates:
        assert (r.value is None) != (r.error is None)
        if r.value is not None:
            assert math.isfinite(r.value)
            assert r.negative_flag == (r.value < 0)


@given(samples())
def test_hybrid_weight_range(data):
    s, C = data
    rsd = est.rsd_hat(s, C)
    assert rsd >= 0
    for x in (0.01, 0.05, 1.0):
        assert 0.0 <= est.hybrid_weight(rsd, x) < 1.0 or rsd / x > 30


@given(samples(max_kinds=4))
def test_batch_kernel_matches_scalar(data):
    s, C = data
    _, names, vals, codes = _kernels.evaluate_batch(s.counts[None, :], s.masses, s.concs, C.values)
    rep = est.estimate_all(s, C).values()
    scale = float(np.sum(s.counts * s.masses**2) / s.sample_mass**2)
    for j, name in enumerate(names):
        public = est.hyb_name(float(name[4:])) if name.startswith("HYB:") else name
        if public not in rep:
            continue
        if rep[public] is None:
            assert codes[0, j] != _kernels.OK
        else:
            assert math.isclose(vals[0, j], rep[public], rel_tol=1e-9, abs_tol=1e-11 * scale)


@given(samples(c_range=(0.0, 0.99)))
def test_syg_matches_pairwise_sum(data):
    s, C = data
    y = s.masses * s.concs
    total = 0.0
    for i in range(s.n_kinds):
        for j in range(i + 1, s.n_kinds):
            w = C.values[i, j] / (1 - C.values[i, j])
            total += s.counts[i] * s.counts[j] * (y[i] - y[j]) ** 2 * w
    assert math.isclose(est.v_syg(s, C), total / s.sample_mass**2, rel_tol=1e-10, abs_tol=1e-300)


designs = st.one_of(
    st.builds(PoissonDesign, st.lists(st.floats(0, 1e4, **finite), min_size=1, max_size=5).map(tuple)),
    st.builds(BernoulliDesign, st.floats(1e-6, 1.0, **finite)),
    st.builds(SrsworDesign, st.integers(1, 10**6)),
    st.builds(lambda k, g: ClusterBernoulliDesign(k, size=g), st.floats(1e-6, 1.0, **finite), st.integers(1, 100)),
)


@given(designs)
def test_design_string_round_trip(design):
    assert parse_design(format_design(design)) == design


@given(st.lists(st.floats(**finite), max_size=20))
def test_report_floats_round_trip(xs):
    back = json.loads(dumps_report({"v": xs}))["v"]
    assert back == xs

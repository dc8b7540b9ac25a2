"""Randomised identity checks for the matrix toolkit and generator validation."""

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from hybridrisk.augment import (build_cumulative_parisian, build_erlang_horizon,
                                build_generalized_omega, build_omega, build_poissonian)
from hybridrisk.core import (LevelDependentGenerator, RiskModelSpec, StateFunction,
                             StatePartition, check_killed, validate_model)
from hybridrisk.matrixkit import (ErlangClock, PhaseType, kron_sum, mat_exp, ph_cdf, ph_density,
                                  product_integral)

rates = st.floats(0.05, 3.0)
GRID = np.linspace(-3.0, 3.0, 31)


@st.composite
def sub_generators(draw, max_n=4):
    n = draw(st.integers(1, max_n))
    off = draw(arrays(float, (n, n), elements=st.floats(0.0, 2.0)))
    np.fill_diagonal(off, 0.0)
    exit_ = draw(arrays(float, n, elements=st.floats(0.05, 2.0)))
    return off - np.diag(off.sum(axis=1) + exit_)


@st.composite
def phase_types(draw, max_n=4):
    t = draw(sub_generators(max_n))
    w = draw(arrays(float, t.shape[0], elements=st.floats(0.01, 1.0)))
    return PhaseType(w / w.sum(), t)


@st.composite
def generators(draw, max_n=4):
    n = draw(st.integers(1, max_n))
    lam = draw(arrays(float, (n, n), elements=st.floats(0.0, 3.0)))
    np.fill_diagonal(lam, 0.0)
    np.fill_diagonal(lam, -lam.sum(axis=1))
    return lam


@given(a=sub_generators(3), b=sub_generators(3))
def test_exp_of_kronecker_sum_factorises(a, b):
    np.testing.assert_allclose(mat_exp(kron_sum(a, b)), np.kron(mat_exp(a), mat_exp(b)),
                               atol=1e-10)


@given(a=sub_generators(4), s=st.floats(0.0, 2.0), t=st.floats(0.0, 2.0))
def test_semigroup_property(a, s, t):
    np.testing.assert_allclose(mat_exp(a * (s + t)), mat_exp(a * s) @ mat_exp(a * t), atol=1e-10)


@given(lam=generators())
def test_exp_of_generator_is_stochastic(lam):
    p = mat_exp(lam)
    assert np.all(p > -1e-12)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)


@given(ph=phase_types(), y=st.floats(0.01, 5.0))
def test_ph_density_is_cdf_derivative(ph, y):
    dy = 1e-5
    slope = (ph_cdf(ph, [y + dy])[0] - ph_cdf(ph, [y - dy])[0]) / (2 * dy)
    assert slope == pytest.approx(ph_density(ph, [y])[0], rel=1e-5, abs=1e-8)
    assert 0.0 <= ph_cdf(ph, [y])[0] <= 1.0


@given(ph=phase_types())
def test_ph_mean_formula(ph):
    mean = ph.alpha @ np.linalg.solve(-ph.T, np.ones(ph.order))
    assert ph.mean() == pytest.approx(mean)
    assert ph.moment(2) >= ph.mean() ** 2 * (1 - 1e-12)


@given(t=sub_generators(3), y=st.floats(0.1, 2.0))
def test_constant_product_integral_is_exponential(t, y):
    prop = product_integral(lambda v: t, y, steps=200)
    np.testing.assert_allclose(prop.P[-1], mat_exp(t * y), atol=1e-7)


@given(lam=generators(), drift=arrays(float, 4, elements=st.floats(-2, 2)),
       sig=arrays(float, 4, elements=st.floats(0, 2)))
def test_conservative_generators_validate(lam, drift, sig):
    n = lam.shape[0]
    spec = RiskModelSpec(StatePartition(tuple(range(n))), StateFunction(list(drift[:n])),
                         StateFunction(list(sig[:n])), LevelDependentGenerator.constant(lam))
    assert validate_model(spec, GRID).passed


@given(lam=generators(), bump=st.floats(1e-3, 1.0), row=st.integers(0, 3))
def test_positive_row_sums_are_rejected(lam, bump, row):
    n = lam.shape[0]
    for sign, bad in ((1.0, True), (-1.0, False)):
        mat = lam.copy()
        mat[row % n, row % n] += sign * bump
        spec = RiskModelSpec(StatePartition(tuple(range(n))), StateFunction([1.0] * n),
                             StateFunction([0.0] * n), LevelDependentGenerator.constant(mat))
        assert ("rowsum" in validate_model(spec, GRID).rules()) == bad


@given(lam=generators(3), k=sub_generators(3))
def test_kronecker_sum_keeps_clock_defect(lam, k):
    rows = kron_sum(lam, k).sum(axis=1)
    np.testing.assert_allclose(rows, np.kron(np.ones(lam.shape[0]), k.sum(axis=1)), atol=1e-12)


@given(t=sub_generators(3), y=st.floats(0.1, 3.0))
def test_propagator_is_substochastic(t, y):
    prop = product_integral(lambda v: t * (1 + 0.5 * np.sin(v)), y, steps=100)
    sums = prop.P.sum(axis=2)
    assert np.all(sums >= -1e-12) and np.all(sums <= 1 + 1e-12)
    assert np.all(prop.P >= -1e-10)


@given(lam=generators(3), i=st.integers(0, 2), j=st.integers(0, 2), neg=st.floats(1e-3, 1.0))
def test_negative_off_diagonal_is_rejected(lam, i, j, neg):
    n = lam.shape[0]
    i, j = i % n, j % n
    assume(i != j)
    lam = lam.copy()
    lam[i, i] += lam[i, j] + neg
    lam[i, j] = -neg
    spec = RiskModelSpec(StatePartition(tuple(range(n))), StateFunction([1.0] * n),
                         StateFunction([0.0] * n), LevelDependentGenerator.constant(lam))
    assert "offdiag" in validate_model(spec, GRID).rules()


@st.composite
def jump_models(draw):
    n_p = draw(st.integers(1, 2))
    n_d = draw(st.integers(0, 2))
    n = n_p + n_d
    off = draw(arrays(float, (n, n), elements=st.floats(0.0, 2.0)))
    np.fill_diagonal(off, 0.0)
    lam = off - np.diag(off.sum(axis=1))
    drift = [draw(st.floats(-1.0, 2.0)) for _ in range(n_p)] + [-1.0] * n_d
    sig = [draw(st.floats(0.0, 1.0)) for _ in range(n_p)] + [0.0] * n_d
    part = StatePartition(tuple(range(n_p)), (), tuple(range(n_p, n)))
    return RiskModelSpec(part, StateFunction(drift), StateFunction(sig),
                         LevelDependentGenerator.constant(lam))


@given(model=jump_models(), m=st.integers(1, 3), r=rates, which=st.integers(0, 4))
def test_builders_keep_defect_decomposition(model, m, r, which):
    build = [lambda: build_erlang_horizon(model, ErlangClock(m, r)),
             lambda: build_poissonian(model, r),
             lambda: build_cumulative_parisian(model, PhaseType.erlang(m, r)),
             lambda: build_omega(model, lambda s, x: r * np.abs(x)),
             lambda: build_generalized_omega(model, horizon=ErlangClock(m, r),
                                             grace=PhaseType.erlang(m, 2 * r),
                                             base_omega=lambda s, x: r + 0 * x)][which]
    aug = build()
    assert validate_model(aug.spec, GRID).passed
    assert check_killed(aug.killing, GRID) < 1e-10
    assert aug.initial_distribution(0).sum() == pytest.approx(1.0)


@given(n_p=st.integers(1, 3), n_u=st.integers(0, 2), n_d=st.integers(0, 2), seed=st.integers(0, 99))
def test_partition_round_trip(n_p, n_u, n_d, seed):
    ids = np.random.default_rng(seed).permutation(n_p + n_u + n_d).tolist()
    part = StatePartition(tuple(ids[:n_p]), tuple(ids[n_p:n_p + n_u]), tuple(ids[n_p + n_u:]))
    again = StatePartition.from_json(part.to_json())
    assert again == part
    assert again.premium_mask.sum() == n_p

import numpy as np
import pytest

from hybridrisk.augment import (RUIN, NON_RUIN, build_cumulative_parisian, build_erlang_horizon,
                                build_generalized_omega, build_infinite_horizon, build_omega,
                                build_poissonian)
from hybridrisk.core import check_killed, validate_model
from hybridrisk.errors import UsageError
from hybridrisk.matrixkit import ErlangClock, PhaseType
from hybridrisk.models import linear_premium, markov_modulated
from conftest import single_state

LEVELS = np.array([-3.0, -0.5, -1e-9, 0.0, 0.5, 4.0])
EXP2 = PhaseType.exponential(2.0)


def two_env():
    return markov_modulated([[-0.5, 0.5], [0.5, -0.5]],
                            [linear_premium(1.0, 0.1), linear_premium(1.5, 0.1)],
                            [1.0, 0.5], [EXP2, PhaseType.exponential(1.0)], [0.5, 0.5])


def abs_omega(scale=1.0):
    return lambda s, x: scale * np.abs(x)


def same_killing(a, b, levels=LEVELS):
    for x, y in zip(a.killing.rates(levels), b.killing.rates(levels)):
        np.testing.assert_allclose(x, y, atol=1e-14)


def all_builders(model):
    return [build_infinite_horizon(model), build_erlang_horizon(model, ErlangClock(2, 1.0)),
            build_poissonian(model, 2.0), build_cumulative_parisian(model, PhaseType.erlang(2, 3.0)),
            build_omega(model, abs_omega()),
            build_generalized_omega(model, None, None, ErlangClock(2, 1.0), PhaseType.erlang(2, 4.0),
                                    abs_omega(0.5))]


@pytest.mark.parametrize("k", range(6))
def test_every_builder_validates(cl_model, k):
    for model in (cl_model, two_env()):
        aug = all_builders(model)[k]
        grid = np.linspace(-5, 5, 101)
        assert validate_model(aug.spec, grid).passed
        assert check_killed(aug.killing, grid) < 1e-12


@pytest.mark.parametrize("k", range(6))
def test_partition_map_and_clock_freezing(k):
    model = two_env()
    aug = all_builders(model)[k]
    pmap = aug.partition_map
    assert len(set(pmap)) == len(pmap) == aug.n_states
    mh, mr = max(p[1] for p in pmap) + 1, max(p[2] for p in pmap) + 1
    assert set(pmap) == {(s, h, g) for s in range(model.n_states) for h in range(mh)
                         for g in range(mr)}
    prem = model.partition.premium_mask
    gen = aug.killing.base(LEVELS)
    for a, (b, h, g) in enumerate(pmap):
        assert aug.spec.drift(a, 1.3) == model.drift(b, 1.3)
        if not prem[b]:
            for a2, (_, h2, g2) in enumerate(pmap):
                if (h2, g2) != (h, g):
                    assert np.all(gen[:, a, a2] == 0.0)


def test_infinite_horizon(cl_model):
    aug = build_infinite_horizon(cl_model)
    assert aug.n_states == cl_model.n_states
    g, kp, km = aug.killing.rates(LEVELS)
    assert not kp.any() and not km.any()
    np.testing.assert_array_equal(g, cl_model.generator(LEVELS))


def test_erlang_horizon_single_stage(cl_model):
    aug = build_erlang_horizon(cl_model, ErlangClock(1, 0.7))
    g = aug.killing.base(1.0)
    np.testing.assert_allclose(g, cl_model.generator(1.0) - np.diag([0.7, 0.0]))
    assert aug.absorption_classes == {"horizon_clock": NON_RUIN}


def test_erlang_horizon_defects(cl_model):
    aug = build_erlang_horizon(cl_model, ErlangClock(3, 2.0))
    g, kp, km = aug.killing.rates(np.array([-1.0, 1.0]))
    defect = -g.sum(axis=-1)
    prem_rows = [a for a, p in enumerate(aug.partition_map) if p[0] == 0]
    np.testing.assert_allclose(defect[:, prem_rows], [[0, 0, 2.0]] * 2)
    np.testing.assert_allclose(kp, defect)
    assert not km.any()
    np.testing.assert_allclose(aug.initial_distribution(0), [1, 0, 0, 0, 0, 0])


def test_poissonian(cl_model):
    aug = build_poissonian(cl_model, 2.0)
    np.testing.assert_array_equal(aug.killing.kill_minus(np.array([1.0, 0.0])), 0.0)
    np.testing.assert_allclose(aug.killing.kill_minus(-0.2), [2.0, 0.0])
    assert aug.absorption_classes["observation"] == RUIN
    with pytest.raises(UsageError):
        build_poissonian(cl_model, -1.0)


def test_parisian_exponential_equals_poissonian(cl_model):
    for model in (cl_model, two_env()):
        same_killing(build_cumulative_parisian(model, PhaseType.exponential(2.0)),
                     build_poissonian(model, 2.0))


def test_parisian_frozen_above_zero(cl_model):
    aug = build_cumulative_parisian(cl_model, PhaseType.erlang(3, 1.0))
    g = aug.killing.base(np.array([0.0, 2.0]))
    np.testing.assert_allclose(g.sum(axis=-1), 0.0, atol=1e-14)
    below = aug.killing.base(-1.0)
    assert -below.sum(axis=-1)[2] == pytest.approx(1.0)


def test_omega(cl_model):
    same_killing(build_omega(cl_model, lambda s, x: 2.0 + 0 * x), build_poissonian(cl_model, 2.0))
    aug = build_omega(cl_model, abs_omega())
    assert aug.killing.kill_minus_rate(0, -0.5) == 0.5
    zero = build_omega(cl_model, lambda s, x: 0 * x)
    assert not zero.killing.kill_minus(LEVELS).any()
    with pytest.raises(UsageError):
        build_omega(cl_model, lambda s, x: -1.0 + 0 * x)


def test_generalized_omega_reductions():
    model = two_env()
    same_killing(build_generalized_omega(model, base_omega=abs_omega()),
                 build_omega(model, abs_omega()))
    same_killing(build_generalized_omega(model, horizon=ErlangClock(2, 1.5)),
                 build_erlang_horizon(model, ErlangClock(2, 1.5)))
    same_killing(build_generalized_omega(model, grace=PhaseType.erlang(2, 3.0)),
                 build_cumulative_parisian(model, PhaseType.erlang(2, 3.0)))


def test_generalized_omega_three_component_defect():
    model = two_env()
    aug = build_generalized_omega(model, None, None, ErlangClock(2, 1.0), PhaseType.erlang(2, 4.0),
                                  abs_omega(0.5))
    x = -2.0
    g, kp, km = aug.killing.rates(np.array([x]))
    defect = -g[0].sum(axis=-1)
    for a, (b, h, r) in enumerate(aug.partition_map):
        expect = 0.0
        if b < 2:
            expect = 0.5 * abs(x) + (4.0 if r == 1 else 0.0) + (1.0 if h == 1 else 0.0)
        assert defect[a] == pytest.approx(expect)
        assert kp[0, a] == pytest.approx(1.0 if (b < 2 and h == 1) else 0.0)


def test_reweighing():
    model = two_env()

    def w_plus(x):
        out = np.zeros(np.shape(x) + (4, 4))
        out[..., 0, 1] = 0.2
        return out

    aug = build_generalized_omega(model, reweigh_plus=w_plus, reweigh_minus=w_plus)
    g, kp, km = aug.killing.rates(np.array([-1.0, 1.0]))
    assert g[1, 0, 1] == pytest.approx(0.3) and kp[1, 0] == pytest.approx(0.2)
    assert km[0, 0] == pytest.approx(0.2) and kp[0, 0] == 0.0

    def too_big(x):
        out = np.zeros(np.shape(x) + (4, 4))
        out[..., 0, 1] = 0.6
        return out

    with pytest.raises(UsageError):
        build_generalized_omega(model, reweigh_plus=too_big)

    def on_jump(x):
        out = np.zeros(np.shape(x) + (4, 4))
        out[..., 2, 0] = 0.1
        return out

    with pytest.raises(UsageError):
        build_generalized_omega(model, reweigh_minus=on_jump)


def test_bad_clock_and_initial_state(cl_model):
    with pytest.raises(UsageError):
        build_erlang_horizon(cl_model, "soon")
    with pytest.raises(UsageError):
        build_infinite_horizon(cl_model).initial_distribution(5)
    deficient = PhaseType([0.5], [[-1.0]])
    with pytest.raises(UsageError):
        build_erlang_horizon(cl_model, deficient)


def test_single_state_builders():
    aug = build_erlang_horizon(single_state(-1.0), ErlangClock(1, 1.0))
    assert aug.n_states == 1 and aug.killing.kill_plus_rate(0, 0.3) == 1.0

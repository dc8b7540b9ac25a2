import numpy as np
import pytest

from hybridrisk.augment import build_infinite_horizon
from hybridrisk.core import validate_model
from hybridrisk.errors import UsageError
from hybridrisk.grid import discretize
from hybridrisk.matrixkit import PhaseType
from hybridrisk.models import (cramer_lundberg, cramer_lundberg_ruin, dividend_poisson_observed,
                               dividend_refraction, linear_premium, markov_modulated)
from hybridrisk.simulate import estimate_descriptors
from hybridrisk.solver import solve

GRID = np.linspace(-5.0, 10.0, 151)
EXP2 = PhaseType.exponential(2.0)


def two_env(kappa=0.1, sigma=0.5):
    return markov_modulated([[-0.5, 0.5], [0.5, -0.5]],
                            [linear_premium(1.0, kappa), linear_premium(1.5, kappa)],
                            [1.0, 0.5], [EXP2, PhaseType.exponential(1.0)], [sigma, sigma])


def test_cramer_lundberg_structure(cl_model):
    assert cl_model.n_states == 2
    assert cl_model.partition.premium_states == (0,) and cl_model.partition.down_jump_states == (1,)
    np.testing.assert_allclose(cl_model.generator(0.0), [[-1.0, 1.0], [2.0, -2.0]])
    assert cl_model.drift(1, 3.0) == -1.0 and cl_model.drift(0, 3.0) == 1.0
    assert 1.0 * EXP2.mean() / 1.0 == 0.5


def test_cramer_lundberg_closed_form():
    assert cramer_lundberg_ruin(1.0, 1.0, EXP2, 1.0) == pytest.approx(0.5 * np.exp(-1), abs=1e-12)
    np.testing.assert_allclose(cramer_lundberg_ruin(1.0, 1.0, EXP2, [0.0, 2.0]),
                               0.5 * np.exp(-np.array([0.0, 2.0])))
    with pytest.raises(UsageError):
        cramer_lundberg_ruin(1.0, 3.0, EXP2, 1.0)


def test_every_preset_validates(cl_model):
    models = [cl_model, two_env(), dividend_refraction(cl_model, 2.0, 0.5),
              dividend_poisson_observed(cl_model, 2.0, 1.0, 0.5)]
    for m in models:
        assert validate_model(m, GRID).passed, m.name


def test_single_environment_reduces_to_cramer_lundberg(cl_model):
    mm = markov_modulated([[0.0]], [1.0], [1.0], [EXP2])
    for x in (-1.0, 0.0, 3.0):
        np.testing.assert_array_equal(mm.generator(x), cl_model.generator(x))
        for s in range(2):
            assert mm.drift(s, x) == cl_model.drift(s, x)


def test_markov_modulated_blocks():
    m = two_env()
    lam = m.generator(0.0)
    assert m.n_states == 4
    np.testing.assert_allclose(lam[0], [-1.5, 0.5, 1.0, 0.0])
    np.testing.assert_allclose(lam[3], [0.0, 1.0, 0.0, -1.0])
    assert m.drift(1, 2.0) == pytest.approx(1.7)
    assert m.diffusion(0, 2.0) == 0.5 and m.diffusion(2, 2.0) == 0.0
    with pytest.raises(UsageError):
        markov_modulated([[-1.0, 1.0], [0.0, 0.0]], [1.0], [1.0], [EXP2])


def test_refraction(cl_model):
    same = dividend_refraction(cl_model, 2.0, 0.0)
    np.testing.assert_array_equal(same.drift(np.array([0, 1]), np.array([5.0, 5.0])),
                                  cl_model.drift(np.array([0, 1]), np.array([5.0, 5.0])))
    paid = dividend_refraction(cl_model, 2.0, 0.4)
    assert paid.drift(0, 3.0) == pytest.approx(0.6)
    assert paid.drift(0, 1.0) == 1.0 and paid.drift(1, 3.0) == -1.0


def test_poisson_observed_dividends(cl_model):
    off = dividend_poisson_observed(cl_model, 2.0, 0.0, 0.5)
    lam = off.generator(np.array([-1.0, 2.1, 5.0]))
    np.testing.assert_array_equal(lam[:, :2, 2:], 0.0)
    np.testing.assert_array_equal(lam[:, :2, :2], cl_model.generator(np.zeros(3)))
    on = dividend_poisson_observed(cl_model, 2.0, 3.0, 0.5)
    assert on.generator(2.1)[0, 2] == 3.0 and on.generator(2.1)[2, 0] == 0.0
    assert on.generator(1.9)[2, 0] == 3.0 and on.generator(1.9)[0, 2] == 0.0
    assert on.drift(2, 0.0) == 0.5 and on.drift(0, 0.0) == 1.0
    assert on.partition.premium_states == (0, 2)


def _ruin_mc(model, n, seed=3, d=20.0):
    aug = build_infinite_horizon(model)
    ds = estimate_descriptors(aug, 1.0, 0, n, 0.01, 0.0, d, seed=seed)
    return ds.total("lower"), float(np.sqrt(ds.total("lower") * (1 - ds.total("lower")) / n))


@pytest.mark.slow
def test_interest_premium_lowers_ruin_mc():
    flat, se0 = _ruin_mc(cramer_lundberg(1.0, 1.0, EXP2), 4000)
    rich, se1 = _ruin_mc(cramer_lundberg(linear_premium(1.0, 0.3), 1.0, EXP2), 4000)
    assert rich < flat + 3 * np.hypot(se0, se1)
    assert rich < flat


@pytest.mark.slow
def test_dividends_raise_ruin_mc(cl_model):
    base, se0 = _ruin_mc(cl_model, 4000)
    paid, se1 = _ruin_mc(dividend_refraction(cl_model, 2.0, 0.4), 4000)
    assert paid > base - 3 * np.hypot(se0, se1)
    assert paid > base


def test_fast_observation_approaches_refraction(cl_model):
    def psi(model):
        grid = discretize(build_infinite_horizon(model), 0.0, 20.0, 2000, q=1e-9)
        return solve(grid, 1.0, 0).total("lower")

    refr = psi(dividend_refraction(cl_model, 2.0, 0.4, width=0.01))
    fast = psi(dividend_poisson_observed(cl_model, 2.0, 1e3, 0.4))
    slow = psi(dividend_poisson_observed(cl_model, 2.0, 1.0, 0.4))
    assert abs(fast - refr) < 1e-2
    assert abs(slow - refr) > abs(fast - refr)

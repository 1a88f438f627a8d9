from __future__ import annotations

import math

import numpy as np
import pytest

from sigsde.market_lab import BsModel, bs_sig_params
from sigsde.path_signature import DiscretePath, add_time, path_signature, time_lead_lag
from sigsde.sig_sde import (
    SigSdeParams,
    TruncationError,
    TruncationWarning,
    lift_word,
    param_words,
    path_functional,
    simulate,
    simulate_batch,
    volatility_series,
)
from sigsde.streams import block_streams, uniform_grid
from sigsde.tensor_algebra import EMPTY, LinearFunctional, pair


def test_param_count():
    assert len(param_words(4)) == 31
    assert SigSdeParams.constant(4, 0.2).n_params == 31
    assert SigSdeParams.from_vector(4, np.arange(31.0)).to_vector().tolist() == list(range(31))


def test_params_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        SigSdeParams(1, LinearFunctional(2, {(1, 1): 1.0}))
    with pytest.raises(ValueError):
        SigSdeParams(2, LinearFunctional(3, {(1,): 1.0}))
    with pytest.raises(ValueError):
        SigSdeParams.constant(2, 0.2, x0=-1.0)
    assert SigSdeParams(2, LinearFunctional(2, {}), -1.0, positive_spot=False).x0 == -1.0
    with pytest.raises(ValueError):
        SigSdeParams.from_vector(2, np.zeros(5))
    p = SigSdeParams.from_vector(2, np.linspace(-1, 1, 7), x0=1.5)
    path = tmp_path / "p.json"
    path.write_text(p.to_json())
    q = SigSdeParams.read(path)
    assert q == p
    with pytest.raises(ValueError):
        SigSdeParams.from_dict({**p.to_dict(), "extra": 1})


def test_path_functional_examples():
    assert path_functional(SigSdeParams.constant(2, 0.3, 1.2)) == LinearFunctional(3, {EMPTY: 1.2, (3,): 0.3})
    p = SigSdeParams(2, LinearFunctional(2, {(1,): 0.5}))
    assert path_functional(p) == LinearFunctional(3, {EMPTY: 1.0, (1, 3): 0.5})


def test_lift_word_examples():
    p = SigSdeParams.constant(2, 0.4)
    assert lift_word((1,), p) == LinearFunctional(3, {(1,): 1.0})
    assert lift_word((2,), p) == LinearFunctional(3, {(3,): 0.4})
    c = lift_word((2, 2), p)
    assert set(c.terms) == {(3, 3)} and c[(3, 3)] == pytest.approx(0.16)
    with pytest.raises(ValueError):
        lift_word((3,), p)
    with pytest.raises(ValueError):
        lift_word((), p)


def test_lift_word_truncation_reporting():
    p = SigSdeParams(2, LinearFunctional(2, {(2, 2): 1.0}))
    with pytest.warns(TruncationWarning):
        lift_word((2, 2), p, algebra_order=4)
    with pytest.raises(TruncationError):
        lift_word((2, 2), p, algebra_order=4, strict=True)


def test_lift_pairs_with_leadlag_signature(rng):
    # on one driver, <C_I, sig^LL(t, W)> is the left-point version of sig(t, X)^I;
    # the piecewise-linear signature uses midpoints, so the two differ by sum(dt dX)/2
    params = SigSdeParams.from_vector(2, rng.normal(0, 0.3, 7))
    grid = uniform_grid(1.0, 30)
    x, w = simulate_batch(params, grid, 1, seed=3, return_driver=True)
    ll = path_signature(time_lead_lag(DiscretePath(grid, w[0])), 9)
    sig_x = path_signature(add_time(DiscretePath(grid, x[0])), 3)
    lifted = {word: pair(lift_word(word, params, algebra_order=9), ll) for word in [(1,), (2,), (1, 2), (2, 1), (2, 2)]}
    half = 0.5 * float(np.sum(np.diff(grid) * np.diff(x[0])))
    assert lifted[(1,)] == pytest.approx(sig_x[(1,)], abs=1e-14)
    assert lifted[(2,)] == pytest.approx(sig_x[(2,)], abs=1e-13)
    assert lifted[(2, 2)] == pytest.approx(sig_x[(2, 2)], abs=1e-13)
    assert lifted[(1, 2)] + half == pytest.approx(sig_x[(1, 2)], abs=1e-13)
    assert lifted[(2, 1)] - half == pytest.approx(sig_x[(2, 1)], abs=1e-13)


def test_zero_volatility_gives_constant_paths():
    p = SigSdeParams(2, LinearFunctional(2, {}), 1.3)
    x = simulate_batch(p, uniform_grid(1.0, 20), 5, seed=0)
    assert np.all(x == 1.3)


def test_simulate_starts_at_x0_and_is_deterministic():
    p = bs_sig_params(BsModel(), 3)
    g = uniform_grid(1.0, 50)
    a = simulate_batch(p, g, 40, seed=11, block_size=16)
    b = simulate_batch(p, g, 40, seed=11, block_size=16)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[:, 0] == 1.0)
    single = simulate(p, g, np.random.default_rng(0))
    assert single.values[0, 0] == 1.0


def test_ito_and_leadlag_routes_agree(rng):
    p = SigSdeParams.from_vector(3, rng.normal(0, 0.3, 15))
    g = uniform_grid(1.0, 60)
    a = simulate_batch(p, g, 50, seed=2, method="ito")
    b = simulate_batch(p, g, 50, seed=2, method="leadlag")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)
    with pytest.raises(ValueError):
        simulate_batch(p, g, 5, seed=2, method="nope")


def test_simulation_is_euler_on_the_driver():
    p = SigSdeParams(2, LinearFunctional(2, {EMPTY: 0.2, (2,): 0.5, (1,): -0.1}))
    g = uniform_grid(1.0, 40)
    x, w = simulate_batch(p, g, 3, seed=8, return_driver=True)
    vol = 0.2 + 0.5 * w[:, :-1] - 0.1 * g[:-1]
    euler = 1.0 + np.concatenate([np.zeros((3, 1)), np.cumsum(vol * np.diff(w, axis=1), axis=1)], axis=1)
    np.testing.assert_allclose(x, euler, atol=1e-13)


def test_grid_validation():
    p = SigSdeParams.constant(1, 0.2)
    with pytest.raises(ValueError):
        simulate_batch(p, np.array([0.1, 0.5]), 2, seed=0)
    with pytest.raises(ValueError):
        simulate_batch(p, np.array([0.0]), 2, seed=0)
    with pytest.raises(ValueError):
        simulate_batch(p, np.array([0.0, 0.5, 0.5]), 2, seed=0)


def test_block_streams_independent_of_total():
    first = [rng.standard_normal(3) for _, _, rng in block_streams(7, 10, 4)]
    again = [rng.standard_normal(3) for _, _, rng in block_streams(7, 6, 4)]
    np.testing.assert_array_equal(first[0], again[0])
    np.testing.assert_array_equal(first[1], again[1])


def test_volatility_series():
    g = uniform_grid(1.0, 10)
    driver = DiscretePath(g, np.sin(g))
    assert np.allclose(volatility_series(SigSdeParams.constant(2, 0.3), driver), 0.3)
    a = SigSdeParams(2, LinearFunctional(2, {(1,): 0.7}))
    np.testing.assert_allclose(volatility_series(a, driver), 0.7 * g, atol=1e-15)
    rng = np.random.default_rng(1)
    p = SigSdeParams.from_vector(2, rng.normal(size=7))
    series = volatility_series(p, driver)
    for k in (1, 4, 10):
        sig = path_signature(add_time(driver.prefix(k)), 2)
        assert series[k] == pytest.approx(pair(p.ell, sig), abs=1e-13)


def test_bachelier_moments():
    sigma = 0.2
    x = simulate_batch(SigSdeParams.constant(1, sigma), uniform_grid(1.0, 50), 20000, seed=4)[:, -1]
    se_mean = x.std() / math.sqrt(len(x))
    assert abs(x.mean() - 1.0) < 3 * se_mean
    var = x.var(ddof=1)
    se_var = math.sqrt(2 / (len(x) - 1)) * sigma**2
    assert abs(var - sigma**2) < 3 * se_var


def test_bs_lift_tracks_gbm_and_improves_with_order():
    model = BsModel(0.2, 1.0)
    g = uniform_grid(1.0, 100)
    rng = np.random.default_rng(9)
    drivers = [DiscretePath(g, np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, 100))])) for _ in range(5)]
    errs = []
    for N in (2, 3, 4):
        p = bs_sig_params(model, N)
        worst = 0.0
        for d in drivers:
            w = d.values[:, 0]
            exact = 0.2 * np.exp(0.2 * w - 0.02 * g)
            worst = max(worst, float(np.max(np.abs(volatility_series(p, d) - exact))))
        errs.append(worst)
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-5

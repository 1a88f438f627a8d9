from __future__ import annotations

import math

import numpy as np
import pytest

from sigsde.calibration import (
    CalibrationInstrument,
    CalibrationProblem,
    OptimizerConfig,
    benchmark_objective,
    calibrate,
)
from sigsde.expected_signature import model_expected_signature
from sigsde.market_lab import BsModel, bs_call_price, bs_sig_params, bs_simulate_batch
from sigsde.payoffs import (
    MarketInstrument,
    SignaturePayoff,
    feature_words,
    fit_signature_payoff,
    price_signature_payoff,
    signature_features,
)
from sigsde.sig_sde import SigSdeParams, simulate_batch
from sigsde.streams import uniform_grid
from sigsde.tensor_algebra import EMPTY, LinearFunctional, all_words


def _payoff(terms, t):
    return SignaturePayoff(LinearFunctional(2, terms, 2), t)


def _fixture(true_vec, n=12, seed=0):
    rng = np.random.default_rng(seed)
    words = all_words(2, 2)
    params = SigSdeParams.from_vector(1, true_vec)
    insts = []
    for k in range(n):
        t = [0.5, 0.75, 1.0][k % 3]
        phi = LinearFunctional(2, dict(zip(words, rng.normal(size=len(words)).tolist())), 2)
        esig = model_expected_signature(params, t, 2)
        price = price_signature_payoff(SignaturePayoff(phi, t), esig)
        insts.append(CalibrationInstrument(f"i{k}", SignaturePayoff(phi, t), price))
    return insts


def test_constant_payoff_has_zero_objective():
    inst = CalibrationInstrument("c", _payoff({EMPTY: 0.4}, 1.0), 0.4)
    res = calibrate(CalibrationProblem([inst], N=1, config=OptimizerConfig(n_starts=2)))
    assert res.objective == 0.0
    assert res.params.n_params == 3


def test_zero_instruments_rejected():
    with pytest.raises(ValueError):
        CalibrationProblem([], N=1)
    inst = CalibrationInstrument("a", _payoff({EMPTY: 1.0}, 1.0), 1.0)
    with pytest.raises(ValueError):
        CalibrationProblem([inst, inst], N=1)
    with pytest.raises(ValueError):
        CalibrationInstrument("x", _payoff({EMPTY: 1.0}, 1.0), float("nan"))


def test_model_prices_match_expected_signature_route():
    insts = _fixture(np.array([0.2, 0.05, -0.1]), n=6)
    prob = CalibrationProblem(insts, N=1)
    vec = np.array([0.25, -0.03, 0.07])
    esig = {t: model_expected_signature(SigSdeParams.from_vector(1, vec), t, 2) for t in (0.5, 0.75, 1.0)}
    direct = [price_signature_payoff(i.payoff, esig[i.payoff.maturity]) for i in insts]
    np.testing.assert_allclose(prob.model_prices(vec), direct, atol=1e-14)


def test_zero_volatility_prices_time_only():
    inst = CalibrationInstrument("q", _payoff({(2, 2): 1.0, (1,): 2.0}, 0.5), 1.0)
    prob = CalibrationProblem([inst], N=1)
    assert prob.model_prices(np.zeros(3))[0] == pytest.approx(1.0)


def test_jacobian_matches_finite_differences():
    insts = _fixture(np.array([0.2, 0.05, -0.1]))
    prob = CalibrationProblem(insts, N=1)
    vec = np.array([0.21, 0.02, -0.05])
    jac = prob.jacobian(vec)
    grad = 2 * jac.T @ prob.residuals(vec)
    h = 1e-5
    fd = np.array([(prob.objective(vec + h * e) - prob.objective(vec - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd))) <= 1e-4


def test_recovers_self_generated_prices():
    truth = np.array([0.2, 0.05, -0.1])
    insts = _fixture(truth)
    prob = CalibrationProblem(insts, N=1, config=OptimizerConfig(n_starts=4))
    res = calibrate(prob)
    assert res.objective <= 1e-10
    assert np.max(np.abs(res.model_prices - res.market_prices)) <= 1e-5
    assert benchmark_objective(prob, SigSdeParams.from_vector(1, truth)) < 1e-25


def test_monotone_acceptance_and_trace():
    insts = _fixture(np.array([0.2, 0.05, -0.1]))
    res = calibrate(CalibrationProblem(insts, N=1, config=OptimizerConfig(n_starts=3, max_iter=3)))
    for s in res.starts:
        assert s.final_objective <= s.initial_objective
        assert len(s.trace) >= 1
    assert res.objective == min(s.final_objective for s in res.starts)
    assert res.trace == res.starts[res.best_start].trace


def test_calibration_is_deterministic():
    insts = _fixture(np.array([0.2, 0.05, -0.1]), seed=4)
    cfg = OptimizerConfig(n_starts=3, seed=9)
    a = calibrate(CalibrationProblem(insts, N=1, config=cfg))
    b = calibrate(CalibrationProblem(insts, N=1, config=cfg))
    np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
    assert a.residuals_csv() == b.residuals_csv()


def test_starts_use_atm_bachelier_reading():
    price = 0.2 * math.sqrt(1.0 / (2 * math.pi))
    inst = CalibrationInstrument("v", _payoff({EMPTY: price}, 1.0), price, kind="vanilla_call", strike=1.0)
    prob = CalibrationProblem([inst], N=2, config=OptimizerConfig(n_starts=5))
    starts = prob.starts()
    assert len(starts) == 5
    assert starts[0][0] == pytest.approx(0.2)
    assert np.all(starts[0][1:] == 0.0)


def test_residuals_csv(tmp_path):
    insts = _fixture(np.array([0.2, 0.0, 0.0]), n=3)
    res = calibrate(CalibrationProblem(insts, N=1, config=OptimizerConfig(n_starts=1)))
    lines = res.residuals_csv().splitlines()
    assert lines[0] == "instrument_id,model_price,market_price,abs_error"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["i0", "i1", "i2"]
    res.write_residuals(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == res.residuals_csv()
    assert res.summary()["best_start"] == res.best_start


def test_weights_scale_residuals():
    a = CalibrationInstrument("a", _payoff({EMPTY: 1.0}, 1.0), 0.0, weight=4.0)
    prob = CalibrationProblem([a], N=1)
    assert prob.residuals(np.zeros(3))[0] == pytest.approx(2.0)


def test_objective_equals_sum_of_squared_residuals():
    insts = _fixture(np.array([0.2, 0.05, -0.1]), n=5)
    res = calibrate(CalibrationProblem(insts, N=1, config=OptimizerConfig(n_starts=1, max_iter=5)))
    assert len(res.residuals) == 5
    assert res.objective == pytest.approx(float(res.residuals @ res.residuals), rel=1e-12)


def test_zero_ell_objective_matches_constant_path_pricing():
    # with zero volatility the price path is flat, so phi is paired with sig(t, x0)
    insts = _fixture(np.array([0.2, 0.05, -0.1]), n=6, seed=3)
    prob = CalibrationProblem(insts, N=2)
    grid = uniform_grid(1.0, 20)
    flat = simulate_batch(SigSdeParams(2, LinearFunctional(2, {}), 1.0), grid, 2, seed=0)
    feats = signature_features(grid, flat, [0.5, 0.75, 1.0], 2)
    words = feature_words(2)
    expected = 0.0
    for i in insts:
        vec = np.array([i.payoff.phi[w] for w in words])
        expected += (float(feats[i.payoff.maturity][0] @ vec) - i.price) ** 2
    assert prob.objective(np.zeros(prob.n_params)) == pytest.approx(expected, rel=1e-12)


def test_bs_lift_is_near_achievability_bound():
    model = BsModel(0.2, 1.0)
    grid = uniform_grid(1.0, 200)
    paths = bs_simulate_batch(model, grid, 20000, seed=12)
    insts, rmse2 = [], 0.0
    for k, strike in enumerate((0.9, 1.0, 1.1)):
        inst = MarketInstrument("vanilla_call", strike, 1.0)
        sp, rep = fit_signature_payoff((grid, paths), inst, 2)
        insts.append(CalibrationInstrument(f"v{k}", sp, bs_call_price(model, strike, 1.0)))
        rmse2 += rep.holdout_rmse**2
    prob = CalibrationProblem(insts, N=4, algebra_order=10)
    assert benchmark_objective(prob, bs_sig_params(model, 4)) <= rmse2 * 1.1

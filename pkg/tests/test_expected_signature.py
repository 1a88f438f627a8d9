from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from sigsde.expected_signature import (
    MAX_DECOMPOSED_LENGTH,
    ExpectedSignaturePolynomial,
    alpha,
    bm_expected_signature,
    decompositions,
    leadlag_bm_expected_coefficient,
    leadlag_bm_expected_signature,
    model_expected_signature,
)
from sigsde.sig_sde import SigSdeParams, TruncationError, TruncationWarning
from sigsde.tensor_algebra import EMPTY, LinearFunctional, all_words, exp_lf


def blocks(word):
    return {tuple(b) for b in (d.blocks for d in decompositions(word))}


def test_decompositions_documented_examples():
    assert blocks((1, 2, 3)) == {((1,), (2,), (3,)), ((1,), (2, 3)), ((1, 2), (3,))}
    assert blocks((3, 2)) == {((3,), (2,)), ((3, 2),)}
    assert blocks((1, 3, 2, 2)) == {
        ((1,), (3,), (2,), (2,)),
        ((1,), (3, 2), (2,)),
        ((1,), (3,), (2, 2)),
        ((1, 3), (2,), (2,)),
        ((1, 3), (2, 2)),
    }
    assert blocks((3, 2, 3)) == {((3,), (2,), (3,)), ((3, 2), (3,)), ((3,), (2, 3))}


def test_decompositions_fibonacci_and_reproduce_word():
    fib = {1: 1, 2: 2}
    for n in range(3, 13):
        fib[n] = fib[n - 1] + fib[n - 2]
    for n in range(1, 13):
        word = tuple((k % 3) + 1 for k in range(n))
        ds = decompositions(word)
        assert len(ds) == fib[n]
        assert all(d.word == word for d in ds)
        assert len({d.blocks for d in ds}) == len(ds)


def test_decompositions_deterministic_and_capped():
    assert decompositions((1, 2, 3, 1)) == decompositions((1, 2, 3, 1))
    with pytest.raises(ValueError):
        decompositions((1,) * (MAX_DECOMPOSED_LENGTH + 1))
    with pytest.raises(ValueError):
        decompositions(())


def test_alpha_table():
    assert alpha((1,)) == LinearFunctional(3, {(1,): 1.0})
    assert alpha((2,)) == LinearFunctional(3, {(2,): 1.0})
    assert alpha((3,)) == LinearFunctional(3, {(2,): 1.0})
    assert alpha((2, 3)) == LinearFunctional(3, {(1,): -0.5})
    assert alpha((3, 2)) == LinearFunctional(3, {(1,): 0.5})
    assert alpha((1, 1)).is_zero()
    assert alpha((3, 3)).is_zero()


def test_bm_expected_signature_coefficients():
    T = 0.7
    e = bm_expected_signature(T, 4)
    assert e[(1,)] == pytest.approx(T)
    assert e[(2,)] == 0.0
    assert e[(2, 2)] == pytest.approx(T / 2)
    assert e[(2, 2, 2, 2)] == pytest.approx(T**2 / 8)  # E[W^4]/4! = 3T^2/24
    for w in all_words(2, 4):
        if w.count(2) % 2:
            assert e[w] == 0.0


def test_leadlag_documented_coefficient_expansion():
    # E[(3,2,3)] = E_T^(2,2,2) + 1/2 E_T^(1,2) - 1/2 E_T^(2,1)
    T = 1.3
    e_t = bm_expected_signature(T, 3)
    expected = e_t[(2, 2, 2)] + 0.5 * e_t[(1, 2)] - 0.5 * e_t[(2, 1)]
    assert leadlag_bm_expected_coefficient((3, 2, 3), T) == pytest.approx(expected, abs=1e-15)
    assert expected == 0.0


def test_leadlag_simple_values():
    T = 1.0
    e = leadlag_bm_expected_signature(T, 4)
    assert e[(2, 3)] == pytest.approx(0.0, abs=1e-15)
    assert e[(3, 2)] == pytest.approx(T)
    assert e[(3, 2, 3)] == pytest.approx(0.0, abs=1e-15)
    assert e[(2, 3)] + e[(3, 2)] == pytest.approx(T)  # E[W_T^2]
    assert e[(2, 2)] == pytest.approx(T / 2)
    assert e[(3, 3)] == pytest.approx(T / 2)


def test_leadlag_dense_matches_decomposition_sum():
    T = 0.8
    e = leadlag_bm_expected_signature(T, 5)
    for w in all_words(3, 5, min_len=1):
        assert e[w] == pytest.approx(leadlag_bm_expected_coefficient(w, T), abs=1e-15)


def test_leadlag_exponential_oracle():
    # independent oracle: exp(T * generator) with the generator of the lead-lag zig-zag
    T = 0.6
    gen = LinearFunctional(3, {(1,): 1.0, (2, 2): 0.5, (3, 2): 1.0, (3, 3): 0.5})
    oracle = exp_lf(gen * T, 5)
    e = leadlag_bm_expected_signature(T, 5)
    for w in all_words(3, 5):
        assert e[w] == pytest.approx(oracle[w], abs=1e-15)


def test_model_expected_signature_bachelier_moments():
    sigma, T = 0.3, 0.9
    params = SigSdeParams.constant(2, sigma)
    e = model_expected_signature(params, T, 4, algebra_order=12)
    assert e[(2,)] == pytest.approx(0.0, abs=1e-15)
    assert e[(1,)] == pytest.approx(T)
    assert e[(2, 2)] == pytest.approx(sigma**2 * T / 2)
    assert e[(2, 2, 2)] == pytest.approx(0.0, abs=1e-15)
    assert e[(2, 2, 2, 2)] == pytest.approx(3 * sigma**4 * T**2 / 24)


def test_polynomial_matches_direct_route():
    rng = np.random.default_rng(5)
    vec = rng.normal(0.0, 0.2, 7)
    params = SigSdeParams.from_vector(2, vec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        direct = model_expected_signature(params, 0.7, 3, algebra_order=8, method="direct")
        poly = model_expected_signature(params, 0.7, 3, algebra_order=8)
    for w in all_words(2, 3):
        assert poly[w] == pytest.approx(direct[w], abs=1e-14)


def test_polynomial_evaluate_many_consistent():
    p = ExpectedSignaturePolynomial(2, 2, 6)
    vec = np.linspace(0.1, 0.4, 7)
    many = p.evaluate_many(vec, [0.3, 1.0])
    np.testing.assert_allclose(many[1], p.evaluate(vec, 1.0), rtol=0, atol=1e-15)
    assert many[0, p.words.index(EMPTY)] == 1.0


def test_truncation_warns_by_default_and_raises_in_strict_mode():
    params = SigSdeParams(4, LinearFunctional(2, {EMPTY: 0.2, (2, 2, 2, 2): 0.01}))
    with pytest.warns(TruncationWarning):
        model_expected_signature(params, 1.0, 2, algebra_order=4)
    with pytest.raises(TruncationError):
        model_expected_signature(params, 1.0, 2, algebra_order=4, strict=True)
    # a constant volatility lifts exactly, so nothing is reported
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        model_expected_signature(SigSdeParams.constant(4, 0.2), 1.0, 2, algebra_order=4)


def test_zero_volatility_expected_signature_is_time_only():
    params = SigSdeParams(2, LinearFunctional(2, {}), 1.0)
    e = model_expected_signature(params, 0.5, 3, algebra_order=9)
    for w in all_words(2, 3):
        expected = 0.5 ** len(w) / math.factorial(len(w)) if 2 not in w else 0.0
        assert e[w] == pytest.approx(expected, abs=1e-15)


def test_invalid_maturity():
    with pytest.raises(ValueError):
        model_expected_signature(SigSdeParams.constant(1, 0.2), 0.0, 2)

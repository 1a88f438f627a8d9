"""The signature volatility model ``dX_t = <ell, sig(t, W)_{0,t}> dW_t``.

Channel convention for the driver's lead-lag lift (3 letters):
``1 = t``, ``2 = W`` lagged, ``3 = W`` leading. Parameter words use letters
``1 = t`` and ``2 = W`` and keep their labels under the lift; letter 3 is the
Ito integrator.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sigsde.path_signature import BatchSignature, DiscretePath, add_time, word_index
from sigsde.streams import DEFAULT_BLOCK, block_streams, check_grid
from sigsde.tensor_algebra import EMPTY, LinearFunctional, Word, all_words, half_shuffle


class TruncationWarning(UserWarning):
    """A lifted word functional did not fit under the algebra order."""


class TruncationError(ValueError):
    """Raised instead of :class:`TruncationWarning` in strict mode."""


def param_words(N: int) -> list[Word]:
    """Parameter coordinates: words over ``{1, 2}`` up to length ``N``, length-then-lex."""
    return all_words(2, N)


@dataclass(frozen=True)
class SigSdeParams:
    """Model order ``N``, volatility functional ``ell`` over ``{1,2}`` and spot ``x0``."""

    N: int
    ell: LinearFunctional
    x0: float = 1.0
    positive_spot: bool = True

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("model order N must be positive")
        if self.ell.d != 2:
            raise ValueError("ell must be a functional over the letters {1, 2}")
        if self.ell.degree > self.N:
            raise ValueError(f"ell has words longer than N={self.N}")
        if not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        if self.positive_spot and self.x0 <= 0:
            raise ValueError("x0 must be positive (set positive_spot=False to allow any real)")
        object.__setattr__(self, "ell", LinearFunctional(2, self.ell.terms, self.N))

    @property
    def n_params(self) -> int:
        return 2 ** (self.N + 1) - 1

    def to_vector(self) -> np.ndarray:
        return np.array([self.ell.coef(w) for w in param_words(self.N)])

    @classmethod
    def from_vector(cls, N: int, vec: Sequence[float], x0: float = 1.0, **kw) -> SigSdeParams:
        words = param_words(N)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(words),):
            raise ValueError(f"expected {len(words)} coefficients, got shape {vec.shape}")
        return cls(N, LinearFunctional(2, dict(zip(words, vec.tolist())), N), x0, **kw)

    @classmethod
    def constant(cls, N: int, sigma: float, x0: float = 1.0) -> SigSdeParams:
        """Bachelier model: constant volatility ``sigma``."""
        return cls(N, LinearFunctional(2, {EMPTY: sigma}, N), x0)

    def to_dict(self) -> dict:
        return {"N": self.N, "x0": self.x0, "ell": self.ell.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> SigSdeParams:
        extra = set(data) - {"N", "x0", "ell"}
        if extra:
            raise ValueError(f"unexpected keys in params: {sorted(extra)}")
        return cls(int(data["N"]), LinearFunctional.from_dict(data["ell"]), float(data["x0"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> SigSdeParams:
        return cls.from_dict(json.loads(text))

    @classmethod
    def read(cls, path: str | Path) -> SigSdeParams:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def path_functional(params: SigSdeParams) -> LinearFunctional:
    """``x0 * () + ell (x) (3)`` over the three lead-lag letters."""
    terms: dict[Word, float] = {EMPTY: params.x0}
    for w, c in params.ell.terms.items():
        terms[w + (3,)] = c
    return LinearFunctional(3, terms, params.N + 1)


def integrand_functional(params: SigSdeParams) -> LinearFunctional:
    """``ell (x) (3)``: the price increment as a lead-lag functional."""
    return LinearFunctional(3, {w + (3,): c for w, c in params.ell.terms.items()}, params.N + 1)


def lifted_length(word: Sequence[int], N: int) -> int:
    """Longest word the lift of ``word`` can produce."""
    return sum(1 if k == 1 else N + 1 for k in word)


def leadlag_word_bound(n: int, T: float) -> float:
    """Bound on ``|E[sig^LL]|`` for any word of length ``n``.

    Every coefficient is ``T^j/j!`` times block weights at most one, with
    ``ceil(n/2) <= j <= n`` blocks.
    """
    return max(T**j / math.factorial(j) for j in range((n + 1) // 2, n + 1))


def report_truncation(word: Sequence[int], N: int, algebra_order: int | None, T: float = 1.0,
                      strict: bool = False) -> bool:
    """Warn (or raise) when the lift of ``word`` overflows ``algebra_order``."""
    if algebra_order is None:
        return False
    need = lifted_length(word, N)
    if need <= algebra_order:
        return False
    n = algebra_order + 1
    msg = (
        f"lift of {tuple(word)} needs words up to length {need} but algebra_order={algebra_order}; "
        f"each dropped unit coefficient moves the price by at most {leadlag_word_bound(n, T):.3e} at T={T:g}"
    )
    if strict:
        raise TruncationError(msg)
    warnings.warn(msg, TruncationWarning, stacklevel=3)
    return True


def lift_word(
    word: Sequence[int],
    params: SigSdeParams,
    algebra_order: int | None = None,
    strict: bool = False,
) -> LinearFunctional:
    """Functional ``C_I(ell)`` with ``sig(t, X)^I = <C_I(ell), sig^LL(t, W)>``.

    Left-nested half-shuffles ``(...((P_{i1} > P_{i2}) > P_{i3}) ... > P_{in})``
    with ``P_1 = (1)`` and ``P_2 = ell (x) (3)``.
    """
    word = tuple(int(k) for k in word)
    if not word:
        raise ValueError("lift_word needs a non-empty word")
    if any(k not in (1, 2) for k in word):
        raise ValueError(f"word {word} must use letters 1 and 2 only")
    report_truncation(word, params.N, algebra_order, strict=strict)
    p1 = LinearFunctional(3, {(1,): 1.0})
    p2 = integrand_functional(params)
    pieces = {1: p1, 2: LinearFunctional(3, p2.terms)}
    c = pieces[word[0]]
    if algebra_order is not None:
        c = c.truncate(algebra_order)
    for k in word[1:]:
        c = half_shuffle(c, pieces[k], order=algebra_order)
    return c


def _pairing_levels(params: SigSdeParams) -> list[np.ndarray]:
    order = params.N + 1
    vecs = [np.zeros(3**n) for n in range(order + 1)]
    for w, c in integrand_functional(params).terms.items():
        vecs[len(w)][word_index(w, 3)] += c
    return vecs


def _ell_levels(params: SigSdeParams) -> list[np.ndarray]:
    vecs = [np.zeros(2**n) for n in range(params.N + 1)]
    for w, c in params.ell.terms.items():
        vecs[len(w)][word_index(w, 2)] += c
    return vecs


def _simulate_leadlag(params: SigSdeParams, grid: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Chain per-interval lead-lag signatures and pair with ``x0 () + ell (x) (3)``."""
    b, n = dw.shape
    order = params.N + 1
    vecs = _pairing_levels(params)
    active = [k for k in range(1, order + 1) if vecs[k].any()]
    eng = BatchSignature(b, 3, order)
    out = np.empty((b, n + 1))
    out[:, 0] = params.x0
    dt = np.diff(grid)
    lead = np.zeros((b, 3))
    lag = np.zeros((b, 3))
    for k in range(n):
        lead[:, 2] = dw[:, k]
        eng.update(lead)
        lag[:, 0] = dt[k]
        lag[:, 1] = dw[:, k]
        eng.update(lag)
        x = np.full(b, params.x0)
        for lv in active:
            x += eng.levels[lv] @ vecs[lv]
        out[:, k + 1] = x
    return out


def _simulate_ito(params: SigSdeParams, grid: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Same paths via ``X_{k+1} = X_k + <ell, sig(t, W)_{0,t_k}> dW_k``.

    While the lead channel moves, ``(t, W^lag)`` is frozen at ``t_k``, so the
    lead-lag pairing collapses to this sum; only the order-``N`` signature of
    ``(t, W)`` is needed.
    """
    b, n = dw.shape
    vecs = _ell_levels(params)
    active = [k for k in range(params.N + 1) if vecs[k].any()]
    eng = BatchSignature(b, 2, params.N)
    out = np.empty((b, n + 1))
    out[:, 0] = params.x0
    dt = np.diff(grid)
    delta = np.zeros((b, 2))
    x = np.full(b, params.x0)
    for k in range(n):
        vol = np.zeros(b)
        for lv in active:
            vol += eng.levels[lv] @ vecs[lv]
        x = x + vol * dw[:, k]
        out[:, k + 1] = x
        delta[:, 0] = dt[k]
        delta[:, 1] = dw[:, k]
        eng.update(delta)
    return out


_METHODS = {"ito": _simulate_ito, "leadlag": _simulate_leadlag}


def _simulate_from_increments(params: SigSdeParams, grid: np.ndarray, dw: np.ndarray,
                              method: str = "ito") -> np.ndarray:
    """Paths ``(batch, n_steps + 1)`` from driver increments ``dw`` of shape ``(batch, n_steps)``."""
    try:
        fn = _METHODS[method]
    except KeyError:
        raise ValueError(f"unknown simulation method {method!r}; use one of {sorted(_METHODS)}") from None
    return fn(params, grid, dw)


def simulate(params: SigSdeParams, grid: np.ndarray, rng: np.random.Generator,
             method: str = "ito") -> DiscretePath:
    """One sample path on ``grid``; the driver is drawn from ``rng``."""
    grid = check_grid(grid)
    dw = rng.standard_normal(len(grid) - 1) * np.sqrt(np.diff(grid))
    return DiscretePath(grid, _simulate_from_increments(params, grid, dw[None], method)[0])


def simulate_batch(
    params: SigSdeParams,
    grid: np.ndarray,
    n_paths: int,
    seed: int | np.random.SeedSequence,
    block_size: int = DEFAULT_BLOCK,
    return_driver: bool = False,
    method: str = "ito",
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """``n_paths`` sample paths, shape ``(n_paths, len(grid))``.

    With ``return_driver`` the Brownian paths are returned as well.
    ``method="leadlag"`` chains full lead-lag signatures instead of the
    equivalent (and much cheaper) Ito sum.
    """
    grid = check_grid(grid)
    n = len(grid) - 1
    sq = np.sqrt(np.diff(grid))
    out = np.empty((n_paths, n + 1))
    drivers = np.empty((n_paths, n + 1)) if return_driver else None
    for start, stop, rng in block_streams(seed, n_paths, block_size):
        dw = rng.standard_normal((stop - start, n)) * sq
        out[start:stop] = _simulate_from_increments(params, grid, dw, method)
        if drivers is not None:
            drivers[start:stop, 0] = 0.0
            drivers[start:stop, 1:] = np.cumsum(dw, axis=1)
    if drivers is not None:
        return out, drivers
    return out


def volatility_series(params: SigSdeParams, driver: DiscretePath) -> np.ndarray:
    """``Sigma_{t_k} = <ell, sig(t, W)_{0,t_k}>`` at every node of ``driver``."""
    if driver.dim != 1:
        raise ValueError("driver must be one-dimensional")
    lifted = add_time(driver)
    eng = BatchSignature(1, 2, params.N)
    vecs = _ell_levels(params)
    out = np.empty(len(driver))

    def current() -> float:
        return float(sum(eng.levels[n][0] @ vecs[n] for n in range(params.N + 1)))

    out[0] = current()
    for k, delta in enumerate(lifted.increments):
        eng.update(delta[None])
        out[k + 1] = current()
    return out

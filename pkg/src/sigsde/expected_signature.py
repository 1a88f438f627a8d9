"""Expected signatures: Brownian motion, its lead-lag lift, and the model.

The lead-lag Brownian expected signature is a sum over block decompositions
of the word (blocks of length one or two) mapped through ``alpha`` and paired
with ``E_T = exp(T (1) + T/2 (2,2))``.

``E_T`` is stored as a power series in ``T``: a word whose image parses into
``j`` blocks of ``(1)`` and ``(2,2)`` carries ``T**j / j!``. Dense arrays in
this module therefore have a leading axis ``j = 0..order`` and are evaluated
at a maturity with :func:`time_weights`.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from sigsde.path_signature import word_index
from sigsde.sig_sde import SigSdeParams, TruncationWarning, lift_word, param_words, report_truncation
from sigsde.tensor_algebra import (
    EMPTY,
    LinearFunctional,
    MultiIndex,
    Word,
    all_words,
    concat_lf,
    exp_lf,
    pair,
)

MAX_DECOMPOSED_LENGTH = 24


@dataclass(frozen=True)
class BlockDecomposition:
    """Ordered split of a word into blocks of length one or two."""

    blocks: tuple[Word, ...]

    def __post_init__(self) -> None:
        if any(len(b) not in (1, 2) for b in self.blocks):
            raise ValueError(f"blocks must have length 1 or 2: {self.blocks}")

    @property
    def word(self) -> Word:
        return tuple(k for b in self.blocks for k in b)

    def __len__(self) -> int:
        return len(self.blocks)


def decompositions(word: MultiIndex | Sequence[int]) -> list[BlockDecomposition]:
    """All splits of ``word`` into consecutive blocks of length 1 or 2.

    Bit ``j`` of the mask joins the gap ``j`` places from the right end; masks
    with two adjacent joined gaps are skipped.
    """
    w = word.letters if isinstance(word, MultiIndex) else tuple(word)
    n = len(w)
    if n < 1:
        raise ValueError("decompositions need a non-empty word")
    if n > MAX_DECOMPOSED_LENGTH:
        raise ValueError(f"refusing to enumerate decompositions of a word longer than {MAX_DECOMPOSED_LENGTH}")
    out = []
    for mask in range(1 << (n - 1)):
        if mask & (mask >> 1):
            continue
        blocks: list[Word] = []
        i = 0
        while i < n:
            gap = n - 2 - i  # bit index of the gap after position i
            if i < n - 1 and mask >> gap & 1:
                blocks.append(w[i : i + 2])
                i += 2
            else:
                blocks.append(w[i : i + 1])
                i += 1
        out.append(BlockDecomposition(tuple(blocks)))
    return out


_ALPHA: dict[Word, tuple[Word, float]] = {
    (1,): ((1,), 1.0),
    (2,): ((2,), 1.0),
    (3,): ((2,), 1.0),
    (2, 3): ((1,), -0.5),
    (3, 2): ((1,), 0.5),
}


def alpha(block: MultiIndex | Sequence[int]) -> LinearFunctional:
    """Block map onto the Brownian expected-signature alphabet ``{1, 2}``.

    Returned over three letters so that it pairs with lead-lag words.
    """
    b = block.letters if isinstance(block, MultiIndex) else tuple(int(k) for k in block)
    if len(b) not in (1, 2) or any(k not in (1, 2, 3) for k in b):
        raise ValueError(f"alpha is defined on blocks of length 1 or 2 over {{1,2,3}}, got {b}")
    hit = _ALPHA.get(b)
    if hit is None:
        return LinearFunctional.zero(3)
    return LinearFunctional(3, {hit[0]: hit[1]})


@lru_cache(maxsize=64)
def bm_expected_signature(T: float, order: int) -> LinearFunctional:
    """``E[sig(t, W)_{0,T}] = exp(T (1) + T/2 (2,2))`` truncated at ``order``."""
    if T <= 0:
        raise ValueError("T must be positive")
    gen = LinearFunctional(2, {(1,): T, (2, 2): T / 2.0})
    return exp_lf(gen, order)


def leadlag_bm_expected_coefficient(word: Sequence[int], T: float) -> float:
    """One coefficient of the lead-lag expected signature, summing over decompositions."""
    w = tuple(int(k) for k in word)
    if not w:
        return 1.0
    if any(k not in (1, 2, 3) for k in w):
        raise ValueError(f"lead-lag words use letters 1..3, got {w}")
    e_t = bm_expected_signature(T, len(w))
    total = 0.0
    for dec in decompositions(w):
        prod = LinearFunctional.unit(3)
        for block in dec.blocks:
            prod = concat_lf(prod, alpha(block))
            if prod.is_zero():
                break
        else:
            total += pair(prod, _lift_alphabet(e_t))
    return total


def _lift_alphabet(f: LinearFunctional) -> LinearFunctional:
    # view a {1,2} functional inside the {1,2,3} alphabet
    return LinearFunctional(3, f.terms)


def leadlag_expected_levels(order: int) -> list[np.ndarray]:
    """Dense lead-lag Brownian expected signature as a power series in ``T``.

    ``levels[n][j, idx]`` is the coefficient of ``T**j / j!`` for the length-n
    word at dense index ``idx``. The decomposition sum is carried out by a
    left-to-right recursion over the last block, tracking whether the
    alpha-image has an unmatched letter 2 pending.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if order > MAX_DECOMPOSED_LENGTH:
        raise ValueError(f"order above {MAX_DECOMPOSED_LENGTH} is not supported")
    J = order + 1

    def shift(a: np.ndarray) -> np.ndarray:
        out = np.zeros_like(a)
        out[1:] = a[:-1]
        return out

    def append_letter(a: np.ndarray, letter: int) -> np.ndarray:
        out = np.zeros((J, a.shape[1], 3))
        out[:, :, letter - 1] = a
        return out.reshape(J, -1)

    def append_pair(a: np.ndarray, first: int, second: int) -> np.ndarray:
        out = np.zeros((J, a.shape[1], 9))
        out[:, :, 3 * (first - 1) + (second - 1)] = a
        return out.reshape(J, -1)

    closed = [np.zeros((J, 1))]
    pending = [np.zeros((J, 1))]
    closed[0][0, 0] = 1.0
    for n in range(1, order + 1):
        c_prev, p_prev = closed[n - 1], pending[n - 1]
        # (1) -> (1): one more block
        c_new = append_letter(shift(c_prev), 1)
        # (2), (3) -> (2): opens a (2,2) block or closes a pending one (weight 1/2)
        p_new = append_letter(c_prev, 2) + append_letter(c_prev, 3)
        c_new += 0.5 * (append_letter(shift(p_prev), 2) + append_letter(shift(p_prev), 3))
        if n >= 2:
            c_prev2 = closed[n - 2]
            c_new += -0.5 * append_pair(shift(c_prev2), 2, 3)
            c_new += 0.5 * append_pair(shift(c_prev2), 3, 2)
        closed.append(c_new)
        pending.append(p_new)
    return closed


def time_weights(T: float, J: int) -> np.ndarray:
    return np.array([T**j / math.factorial(j) for j in range(J)])


@lru_cache(maxsize=64)
def leadlag_bm_expected_signature(T: float, order: int) -> LinearFunctional:
    """Closed-form ``E[sig^LL(t, W)_{0,T}]`` over ``{1,2,3}`` up to ``order``."""
    if T <= 0:
        raise ValueError("T must be positive")
    levels = leadlag_expected_levels(order)
    tw = time_weights(T, order + 1)
    terms: dict[Word, float] = {}
    for n, arr in enumerate(levels):
        vals = tw @ arr
        for idx in np.flatnonzero(vals):
            word = []
            r = int(idx)
            for _ in range(n):
                word.append(r % 3 + 1)
                r //= 3
            terms[tuple(reversed(word))] = float(vals[idx])
    return LinearFunctional(3, terms, order)


def default_algebra_order(N: int) -> int:
    return 2 * (N + 1)


class ExpectedSignaturePolynomial:
    """Model expected signature as a polynomial in the parameter coordinates.

    For each payoff word ``I`` the price coordinate ``<C_I(ell), E^LL_T>`` is
    multilinear in the copies of ``ell`` inside ``C_I``. Expanding those
    copies over single parameter words gives monomials whose coefficients
    are power series in ``T``; they are computed once by pushing the dense
    expected signature through the adjoints of the half-shuffles:

        <C > (v a), G> = <C, v*(G a^-1)>,   v*(H)_u = sum_{w in u sh v} H_w.

    The truncation is identical to lifting with ``algebra_order`` and pairing.
    """

    def __init__(self, N: int, word_order: int, algebra_order: int | None = None) -> None:
        if word_order < 0:
            raise ValueError("word_order must be non-negative")
        self.N = N
        self.word_order = word_order
        self.algebra_order = default_algebra_order(N) if algebra_order is None else algebra_order
        self.words = all_words(2, word_order)
        self.ell_words = param_words(N)
        self._word_pos = {w: i for i, w in enumerate(self.words)}
        self._pattern_cache: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray]]] = {}
        self._digits_cache: dict[int, np.ndarray] = {}
        self._build()

    # dense helpers over the 3-letter alphabet; G is a list of (J, 3**p) arrays

    def _digits(self, p: int) -> np.ndarray:
        if p not in self._digits_cache:
            idx = np.arange(3**p)
            self._digits_cache[p] = np.stack([(idx // 3 ** (p - 1 - i)) % 3 for i in range(p)], axis=1) \
                if p else np.zeros((1, 0), dtype=np.int64)
        return self._digits_cache[p]

    def _patterns(self, p: int, m: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """For each placement of an m-letter word among p others: (base index of u, powers at K slots)."""
        key = (p, m)
        if key not in self._pattern_cache:
            total = p + m
            digits = self._digits(p)
            pats = []
            for slots in combinations(range(total), m):
                u_pos = [i for i in range(total) if i not in slots]
                u_pow = np.array([3 ** (total - 1 - i) for i in u_pos], dtype=np.int64)
                base = digits @ u_pow if p else np.zeros(1, dtype=np.int64)
                k_pow = np.array([3 ** (total - 1 - i) for i in slots], dtype=np.int64)
                pats.append((base, k_pow))
            self._pattern_cache[key] = pats
        return self._pattern_cache[key]

    @staticmethod
    def _rdiv(g: list[np.ndarray], letter: int) -> list[np.ndarray]:
        J = g[0].shape[0]
        return [g[p + 1].reshape(J, -1, 3)[:, :, letter - 1] for p in range(len(g) - 1)]

    def _shuffle_adjoint(self, h: list[np.ndarray], v: Word) -> list[np.ndarray]:
        m = len(v)
        if m == 0:
            return h
        top = len(h) - 1 - m
        shift = np.array([k - 1 for k in v], dtype=np.int64)
        out = []
        for p in range(top + 1):
            src = h[p + m]
            acc = np.zeros((src.shape[0], 3**p))
            for base, k_pow in self._patterns(p, m):
                acc += src[:, base + int(shift @ k_pow)]
            out.append(acc)
        return out

    def _build(self) -> None:
        M = self.algebra_order
        J = M + 1
        E = leadlag_expected_levels(M)
        acc: dict[tuple[Word, tuple[int, ...]], np.ndarray] = {}
        ell_words = self.ell_words
        ell_cols = [(len(K) + 1, word_index(K + (3,), 3)) for K in ell_words]

        def add(word: Word, mono: tuple[int, ...], vals: np.ndarray) -> None:
            if not vals.any():
                return
            key = (word, tuple(sorted(mono)))
            if key in acc:
                acc[key] = acc[key] + vals
            else:
                acc[key] = vals.copy()

        def visit(suffix: Word, g: list[np.ndarray], mono: tuple[int, ...]) -> None:
            top = len(g) - 1
            if len(suffix) + 1 <= self.word_order:
                if top >= 1:
                    add((1,) + suffix, mono, g[1][:, 0])
                for k, (lev, col) in enumerate(ell_cols):
                    if lev <= top:
                        add((2,) + suffix, mono + (k,), g[lev][:, col])
            if len(suffix) + 2 > self.word_order or top < 2:
                return
            visit((1,) + suffix, self._rdiv(g, 1), mono)
            h = self._rdiv(g, 3)
            for k, K in enumerate(ell_words):
                if top - 1 - len(K) >= 1:
                    visit((2,) + suffix, self._shuffle_adjoint(h, K), mono + (k,))

        visit(EMPTY, E, ())
        keys = sorted(acc, key=lambda kv: (len(kv[0]), kv[0], len(kv[1]), kv[1]))
        deg = max((len(m) for _, m in keys), default=0)
        n_ell = len(ell_words)
        self.entry_word = np.array([self._word_pos[w] for w, _ in keys], dtype=np.int64)
        self.entry_mono = np.full((len(keys), max(deg, 1)), n_ell, dtype=np.int64)
        for i, (_, m) in enumerate(keys):
            self.entry_mono[i, : len(m)] = m
        self.entry_coef = np.array([acc[k] for k in keys]).reshape(len(keys), J)
        self.J = J

    @property
    def n_terms(self) -> int:
        return len(self.entry_word)

    def monomials(self, ell: np.ndarray) -> np.ndarray:
        ext = np.append(np.asarray(ell, dtype=float), 1.0)
        return ext[self.entry_mono].prod(axis=1)

    def evaluate_many(self, ell: np.ndarray, maturities: Sequence[float]) -> np.ndarray:
        """Expected signature coordinates, shape ``(len(maturities), len(words))``."""
        mono = self.monomials(ell)
        tw = np.stack([time_weights(t, self.J) for t in maturities], axis=1)  # (J, nT)
        contrib = (self.entry_coef @ tw) * mono[:, None]
        out = np.zeros((len(maturities), len(self.words)))
        for i in range(len(maturities)):
            out[i] = np.bincount(self.entry_word, weights=contrib[:, i], minlength=len(self.words))
        out[:, self._word_pos[EMPTY]] = 1.0
        return out

    def evaluate(self, ell: np.ndarray, T: float) -> np.ndarray:
        return self.evaluate_many(ell, [T])[0]

    def functional(self, ell: np.ndarray, T: float) -> LinearFunctional:
        vals = self.evaluate(ell, T)
        return LinearFunctional(2, dict(zip(self.words, vals.tolist())), self.word_order)


@lru_cache(maxsize=16)
def compiled_polynomial(N: int, word_order: int, algebra_order: int) -> ExpectedSignaturePolynomial:
    """Memoized :class:`ExpectedSignaturePolynomial` (immutable once built)."""
    return ExpectedSignaturePolynomial(N, word_order, algebra_order)


def model_expected_signature(
    params: SigSdeParams,
    T: float,
    word_order: int,
    algebra_order: int | None = None,
    strict: bool = False,
    method: str = "polynomial",
) -> LinearFunctional:
    """``E[sig(t, X)_{0,T}]`` over ``{1,2}`` for words up to ``word_order``.

    ``method="direct"`` lifts every word with :func:`lift_word` and pairs it
    with the closed-form lead-lag expectation; ``"polynomial"`` evaluates the
    compiled polynomial. Both truncate at ``algebra_order``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    order = default_algebra_order(params.N) if algebra_order is None else algebra_order
    worst = (2,) * word_order
    report_truncation(worst, params.ell.degree if params.ell.degree >= 0 else 0, order, T=T, strict=strict)
    if method == "polynomial":
        poly = compiled_polynomial(params.N, word_order, order)
        return poly.functional(params.to_vector(), T)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    e_ll = leadlag_bm_expected_signature(T, order)
    terms: dict[Word, float] = {EMPTY: 1.0}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        for w in all_words(2, word_order, min_len=1):
            terms[w] = pair(lift_word(w, params, order), e_ll)
    return LinearFunctional(2, terms, word_order)

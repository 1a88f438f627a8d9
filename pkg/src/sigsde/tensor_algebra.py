"""Sparse free tensor algebra over words on the alphabet {1, ..., d}.

Words are plain tuples of positive ints; :class:`MultiIndex` wraps one with
its alphabet size for callers that want validation. A
:class:`LinearFunctional` is a finite map word -> coefficient kept in sparse
canonical form (no exact zeros stored).

All objects are immutable and every operation is a pure function.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from types import MappingProxyType
from typing import Union

Word = tuple[int, ...]

EMPTY: Word = ()


class AlphabetMismatchError(ValueError):
    """Raised when two operands live over different alphabets."""


@dataclass(frozen=True)
class MultiIndex:
    """A word ``(k_1, ..., k_n)`` over the alphabet ``{1, ..., d}``."""

    letters: Word
    d: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "letters", tuple(int(k) for k in self.letters))
        if self.d < 1:
            raise ValueError(f"alphabet size must be positive, got {self.d}")
        for k in self.letters:
            if not 1 <= k <= self.d:
                raise ValueError(f"letter {k} outside 1..{self.d}")

    def __len__(self) -> int:
        return len(self.letters)

    def __iter__(self) -> Iterator[int]:
        return iter(self.letters)

    def __repr__(self) -> str:
        return f"MultiIndex({self.letters}, d={self.d})"


WordLike = Union[MultiIndex, Iterable[int]]


def _as_word(w: WordLike) -> Word:
    if isinstance(w, MultiIndex):
        return w.letters
    return tuple(int(k) for k in w)


def concat(i: MultiIndex, j: MultiIndex) -> MultiIndex:
    """Concatenation product of two words."""
    if i.d != j.d:
        raise AlphabetMismatchError(f"alphabet sizes differ: {i.d} vs {j.d}")
    return MultiIndex(i.letters + j.letters, i.d)


def word_key(w: Word) -> tuple[int, Word]:
    """Sort key: length first, then lexicographic."""
    return (len(w), w)


def all_words(d: int, max_len: int, min_len: int = 0) -> list[Word]:
    """All words over ``{1..d}`` with ``min_len <= |w| <= max_len``, length-then-lex."""
    out: list[Word] = []
    level: list[Word] = [EMPTY]
    for n in range(max_len + 1):
        if n >= min_len:
            out.extend(level)
        level = [w + (a,) for w in level for a in range(1, d + 1)]
    return out


def shuffle_words(u: Word, v: Word) -> dict[Word, int]:
    """Shuffle product of two words as a word -> multiplicity map.

    Built bottom-up from ``(I a) sh (J b) = ((I a) sh J) b + (I sh (J b)) a``.
    """
    p, q = len(u), len(v)
    # table[i][j] holds u[:i] sh v[:j]
    prev_row: list[dict[Word, int]] = []
    for i in range(p + 1):
        row: list[dict[Word, int]] = []
        for j in range(q + 1):
            if i == 0:
                cell = {v[:j]: 1}
            elif j == 0:
                cell = {u[:i]: 1}
            else:
                cell = {}
                a, b = u[i - 1], v[j - 1]
                for w, c in row[j - 1].items():
                    key = w + (b,)
                    cell[key] = cell.get(key, 0) + c
                for w, c in prev_row[j].items():
                    key = w + (a,)
                    cell[key] = cell.get(key, 0) + c
            row.append(cell)
        prev_row = row
    return prev_row[q]


class LinearFunctional:
    """Finitely supported real functional on words over ``{1..d}``.

    ``max_order`` records the truncation level the value is meaningful up to
    (``None`` means exact / untruncated). Stored words never exceed it.
    """

    __slots__ = ("_d", "_terms", "_max_order")

    def __init__(
        self,
        d: int,
        terms: Mapping[WordLike, float] | Iterable[tuple[WordLike, float]] = (),
        max_order: int | None = None,
    ) -> None:
        if d < 1:
            raise ValueError(f"alphabet size must be positive, got {d}")
        if max_order is not None and max_order < 0:
            raise ValueError("max_order must be non-negative")
        items = terms.items() if isinstance(terms, Mapping) else terms
        clean: dict[Word, float] = {}
        for w, c in items:
            word = _as_word(w)
            for k in word:
                if not 1 <= k <= d:
                    raise ValueError(f"letter {k} outside 1..{d} in word {word}")
            if max_order is not None and len(word) > max_order:
                raise ValueError(f"word {word} longer than max_order={max_order}")
            clean[word] = clean.get(word, 0.0) + float(c)
        self._terms = {w: c for w, c in clean.items() if c != 0.0}
        self._d = d
        self._max_order = max_order

    @classmethod
    def _trusted(cls, d: int, terms: dict[Word, float], max_order: int | None) -> LinearFunctional:
        # terms already validated; prune exact zeros only
        obj = cls.__new__(cls)
        obj._d = d
        obj._terms = {w: c for w, c in terms.items() if c != 0.0}
        obj._max_order = max_order
        return obj

    # construction helpers

    @classmethod
    def zero(cls, d: int, max_order: int | None = None) -> LinearFunctional:
        return cls._trusted(d, {}, max_order)

    @classmethod
    def unit(cls, d: int, max_order: int | None = None) -> LinearFunctional:
        """The empty word with coefficient 1."""
        return cls._trusted(d, {EMPTY: 1.0}, max_order)

    @classmethod
    def from_word(cls, w: WordLike, d: int, coef: float = 1.0) -> LinearFunctional:
        return cls(d, {_as_word(w): coef})

    # accessors

    @property
    def d(self) -> int:
        return self._d

    @property
    def max_order(self) -> int | None:
        return self._max_order

    @property
    def terms(self) -> Mapping[Word, float]:
        return MappingProxyType(self._terms)

    def __getitem__(self, w: WordLike) -> float:
        return self._terms.get(_as_word(w), 0.0)

    def coef(self, w: WordLike) -> float:
        return self._terms.get(_as_word(w), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Word]:
        return iter(sorted(self._terms, key=word_key))

    def items(self) -> list[tuple[Word, float]]:
        return [(w, self._terms[w]) for w in sorted(self._terms, key=word_key)]

    @property
    def degree(self) -> int:
        """Length of the longest stored word (-1 for the zero functional)."""
        return max((len(w) for w in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LinearFunctional):
            return NotImplemented
        return self._d == other._d and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self._d, frozenset(self._terms.items())))

    def __repr__(self) -> str:
        if not self._terms:
            return f"LinearFunctional(d={self._d}, 0)"
        body = " + ".join(f"{c:g}*{w if w else '()'}" for w, c in self.items()[:8])
        more = " + ..." if len(self._terms) > 8 else ""
        return f"LinearFunctional(d={self._d}, {body}{more})"

    # arithmetic sugar

    def __add__(self, other: LinearFunctional) -> LinearFunctional:
        return lin_comb(1.0, self, 1.0, other)

    def __sub__(self, other: LinearFunctional) -> LinearFunctional:
        return lin_comb(1.0, self, -1.0, other)

    def __neg__(self) -> LinearFunctional:
        return scale(-1.0, self)

    def __mul__(self, alpha: float) -> LinearFunctional:
        return scale(alpha, self)

    __rmul__ = __mul__

    def __truediv__(self, alpha: float) -> LinearFunctional:
        return scale(1.0 / alpha, self)

    def truncate(self, n: int) -> LinearFunctional:
        return truncate(self, n)

    def remap(self, mapping: Mapping[int, int], d: int) -> LinearFunctional:
        """Relabel letters through ``mapping`` into an alphabet of size ``d``."""
        out: dict[Word, float] = {}
        for w, c in self._terms.items():
            key = tuple(mapping[k] for k in w)
            out[key] = out.get(key, 0.0) + c
        return LinearFunctional(d, out, self._max_order)

    # serialization

    def to_dict(self) -> dict:
        return {
            "d": self._d,
            "terms": [{"word": list(w), "coef": c} for w, c in self.items()],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> LinearFunctional:
        if set(data) - {"d", "terms"}:
            raise ValueError(f"unexpected keys in functional: {sorted(set(data) - {'d', 'terms'})}")
        terms: dict[Word, float] = {}
        for t in data["terms"]:
            w = tuple(int(k) for k in t["word"])
            if w in terms:
                raise ValueError(f"duplicate word {w}")
            terms[w] = float(t["coef"])
        return cls(int(data["d"]), terms)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> LinearFunctional:
        return cls.from_dict(json.loads(text))


def _check_alphabet(f: LinearFunctional, g: LinearFunctional) -> None:
    if f.d != g.d:
        raise AlphabetMismatchError(f"alphabet sizes differ: {f.d} vs {g.d}")


def _result_order(f: LinearFunctional, g: LinearFunctional, order: int | None) -> int | None:
    if order is not None:
        return order
    finite = [m for m in (f.max_order, g.max_order) if m is not None]
    return min(finite) if finite else None


def scale(alpha: float, f: LinearFunctional) -> LinearFunctional:
    return LinearFunctional._trusted(f.d, {w: alpha * c for w, c in f.terms.items()}, f.max_order)


def lin_comb(alpha: float, f: LinearFunctional, beta: float, g: LinearFunctional) -> LinearFunctional:
    """``alpha*F + beta*G`` in canonical form."""
    _check_alphabet(f, g)
    out = {w: alpha * c for w, c in f.terms.items()}
    for w, c in g.terms.items():
        out[w] = out.get(w, 0.0) + beta * c
    return LinearFunctional._trusted(f.d, out, _result_order(f, g, None))


def pair(f: LinearFunctional, g: LinearFunctional) -> float:
    """Dual pairing ``sum_K F^K G^K``."""
    _check_alphabet(f, g)
    a, b = (f, g) if len(f) <= len(g) else (g, f)
    gt = b.terms
    return math.fsum(c * gt[w] for w, c in a.terms.items() if w in gt)


def truncate(f: LinearFunctional, n: int) -> LinearFunctional:
    """Drop every word longer than ``n``."""
    if n < 0:
        raise ValueError("truncation order must be non-negative")
    order = n if f.max_order is None else min(n, f.max_order)
    return LinearFunctional._trusted(f.d, {w: c for w, c in f.terms.items() if len(w) <= n}, order)


def concat_lf(f: LinearFunctional, g: LinearFunctional, order: int | None = None) -> LinearFunctional:
    """Bilinear extension of concatenation, truncated at ``order``.

    Without an explicit order the result is truncated at the smaller finite
    ``max_order`` of the operands (none if both are exact).
    """
    _check_alphabet(f, g)
    n = _result_order(f, g, order)
    out: dict[Word, float] = {}
    for u, a in f.terms.items():
        lu = len(u)
        if n is not None and lu > n:
            continue
        for v, b in g.terms.items():
            if n is not None and lu + len(v) > n:
                continue
            key = u + v
            out[key] = out.get(key, 0.0) + a * b
    return LinearFunctional._trusted(f.d, out, n)


def shuffle(i: MultiIndex, j: MultiIndex) -> LinearFunctional:
    """Shuffle product of two words."""
    if i.d != j.d:
        raise AlphabetMismatchError(f"alphabet sizes differ: {i.d} vs {j.d}")
    return LinearFunctional._trusted(
        i.d, {w: float(c) for w, c in shuffle_words(i.letters, j.letters).items()}, None
    )


def shuffle_lf(f: LinearFunctional, g: LinearFunctional, order: int | None = None) -> LinearFunctional:
    """Bilinear extension of the shuffle product."""
    _check_alphabet(f, g)
    n = _result_order(f, g, order)
    out: dict[Word, float] = {}
    for u, a in f.terms.items():
        for v, b in g.terms.items():
            if n is not None and len(u) + len(v) > n:
                continue
            ab = a * b
            for w, m in shuffle_words(u, v).items():
                out[w] = out.get(w, 0.0) + ab * m
    return LinearFunctional._trusted(f.d, out, n)


def half_shuffle(f: LinearFunctional, g: LinearFunctional, order: int | None = None) -> LinearFunctional:
    """Half-shuffle ``F > G`` from the word rule ``u > (v a) = (u sh v) a``.

    Pairs against a signature as the Stratonovich integral of ``<F, X>``
    against ``<G, X>``. ``G`` must not carry an empty-word term.
    """
    _check_alphabet(f, g)
    if g.coef(EMPTY) != 0.0:
        raise ValueError("right operand of a half-shuffle must have no empty-word term")
    n = _result_order(f, g, order)
    out: dict[Word, float] = {}
    for u, a in f.terms.items():
        for va, b in g.terms.items():
            if n is not None and len(u) + len(va) > n:
                continue
            v, last = va[:-1], va[-1:]
            ab = a * b
            for w, m in shuffle_words(u, v).items():
                key = w + last
                out[key] = out.get(key, 0.0) + ab * m
    return LinearFunctional._trusted(f.d, out, n)


def exp_lf(f: LinearFunctional, order: int) -> LinearFunctional:
    """Truncated tensor exponential ``() + sum_k F^{(x)k} / k!``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if f.coef(EMPTY) != 0.0:
        raise ValueError("exponential needs a functional without empty-word term")
    result = LinearFunctional.unit(f.d, order)
    power = LinearFunctional.unit(f.d, order)
    for k in range(1, order + 1):
        power = scale(1.0 / k, concat_lf(power, f, order))
        if power.is_zero():
            break
        result = lin_comb(1.0, result, 1.0, power)
    return LinearFunctional._trusted(f.d, dict(result.terms), order)


def geometric_lf(f: LinearFunctional, order: int) -> LinearFunctional:
    """Truncated tensor geometric series ``sum_{k<=order} F^{(x)k}``.

    For a level-one ``F`` this equals the shuffle exponential, so
    ``<geometric_lf(F), S> = exp(<F, S>)`` on group-like ``S`` up to truncation.
    """
    if f.coef(EMPTY) != 0.0:
        raise ValueError("geometric series needs a functional without empty-word term")
    result = LinearFunctional.unit(f.d, order)
    power = LinearFunctional.unit(f.d, order)
    for _ in range(order):
        power = concat_lf(power, f, order)
        if power.is_zero():
            break
        result = lin_comb(1.0, result, 1.0, power)
    return LinearFunctional._trusted(f.d, dict(result.terms), order)

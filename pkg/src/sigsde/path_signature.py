"""Signatures of piecewise-linear paths.

Sparse routes (:func:`segment_signature`, :func:`chen_concat`) work on
:class:`~sigsde.tensor_algebra.LinearFunctional` values. The batched dense
engine (:class:`BatchSignature`) keeps one array per level, shape
``(batch, d**k)``, with words indexed most-significant-letter first, and
is what the Monte Carlo code runs on.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sigsde.tensor_algebra import (
    EMPTY,
    AlphabetMismatchError,
    LinearFunctional,
    Word,
    concat_lf,
    exp_lf,
)


class Signature(LinearFunctional):
    """A truncated signature: empty-word coefficient exactly one."""

    __slots__ = ()

    @property
    def order(self) -> int:
        assert self.max_order is not None
        return self.max_order

    @classmethod
    def from_functional(cls, f: LinearFunctional, order: int | None = None) -> Signature:
        order = f.max_order if order is None else order
        if order is None:
            raise ValueError("a signature needs a finite truncation order")
        if f.coef(EMPTY) != 1.0:
            raise ValueError("signature must have empty-word coefficient 1")
        if f.degree > order:
            raise ValueError("functional has words beyond the signature order")
        return cls._trusted(f.d, dict(f.terms), order)

    @classmethod
    def identity(cls, d: int, order: int) -> Signature:
        return cls._trusted(d, {EMPTY: 1.0}, order)


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Time-stamped samples of a d-dimensional path, linearly interpolated."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.ndim != 2:
            raise ValueError("times must be 1-D and values 1-D or 2-D")
        if len(times) < 2:
            raise ValueError("a path needs at least two samples")
        if len(times) != len(values):
            raise ValueError(f"{len(times)} times but {len(values)} samples")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("path contains non-finite entries")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscretePath):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.values, other.values)

    def prefix(self, k: int) -> DiscretePath:
        """Path restricted to the first ``k + 1`` samples."""
        return DiscretePath(self.times[: k + 1], self.values[: k + 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time"] + [f"c{i + 1}" for i in range(self.dim)])
        for t, row in zip(self.times, self.values):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> DiscretePath:
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "time" or header[1:] != [f"c{i + 1}" for i in range(len(header) - 1)]:
            raise ValueError(f"bad path CSV header: {header}")
        data = np.array([[float(x) for x in r] for r in body], dtype=float)
        return cls(data[:, 0], data[:, 1:])

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def read_csv(cls, path: str | Path) -> DiscretePath:
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def add_time(path: DiscretePath) -> DiscretePath:
    """Prepend time as channel 1."""
    return DiscretePath(path.times, np.column_stack([path.times, path.values]))


def _canonical_grid(path: DiscretePath, n_nodes: int) -> np.ndarray:
    t0, t1 = path.times[0], path.times[-1]
    return t0 + (t1 - t0) * np.arange(n_nodes) / (n_nodes - 1)


def lead_lag(path: DiscretePath) -> DiscretePath:
    """Lead-lag embedding with layout ``(lag block, lead block)``.

    Node ``2k`` is ``(Z_k, Z_k)`` and node ``2k+1`` is ``(Z_k, Z_{k+1})``: the
    lead block moves first, the lag block catches up.
    """
    z = path.values
    n = len(z) - 1
    out = np.empty((2 * n + 1, 2 * path.dim))
    out[0::2, : path.dim] = z
    out[0::2, path.dim :] = z
    out[1::2, : path.dim] = z[:-1]
    out[1::2, path.dim :] = z[1:]
    return DiscretePath(_canonical_grid(path, 2 * n + 1), out)


def time_lead_lag(path: DiscretePath) -> DiscretePath:
    """Time-augmented lead-lag path ``(t, Z^lag, Z^lead)``.

    Time is not doubled: it advances together with the lag block, so the
    adapted pair ``(t, Z^lag)`` is frozen while the lead block moves.
    """
    z, t = path.values, path.times
    n = len(z) - 1
    d = path.dim
    out = np.empty((2 * n + 1, 1 + 2 * d))
    out[0::2, 0] = t
    out[1::2, 0] = t[:-1]
    out[0::2, 1 : 1 + d] = z
    out[1::2, 1 : 1 + d] = z[:-1]
    out[0::2, 1 + d :] = z
    out[1::2, 1 + d :] = z[1:]
    return DiscretePath(_canonical_grid(path, 2 * n + 1), out)


def segment_signature(increment: Sequence[float] | np.ndarray, order: int) -> Signature:
    """Signature of a straight segment: the tensor exponential of its increment."""
    inc = np.asarray(increment, dtype=float).ravel()
    d = len(inc)
    level1 = LinearFunctional(d, {(k + 1,): float(x) for k, x in enumerate(inc)})
    return Signature.from_functional(exp_lf(level1, order), order)


def chen_concat(s1: Signature, s2: Signature) -> Signature:
    """Signature of the concatenated path (Chen's identity)."""
    if s1.d != s2.d:
        raise AlphabetMismatchError(f"alphabet sizes differ: {s1.d} vs {s2.d}")
    if s1.order != s2.order:
        raise ValueError(f"signature orders differ: {s1.order} vs {s2.order}")
    return Signature.from_functional(concat_lf(s1, s2, s1.order), s1.order)


# dense batched engine


def word_index(word: Word, d: int) -> int:
    """Position of ``word`` inside its dense level array."""
    idx = 0
    for k in word:
        idx = idx * d + (k - 1)
    return idx


class BatchSignature:
    """Running truncated signatures of a batch of piecewise-linear paths.

    ``levels[k]`` has shape ``(batch, d**k)``; ``levels[0]`` is all ones.
    """

    def __init__(self, batch: int, d: int, order: int) -> None:
        if order < 0:
            raise ValueError("order must be non-negative")
        self.batch, self.d, self.order = batch, d, order
        self.levels = [np.ones((batch, 1))] + [np.zeros((batch, d**k)) for k in range(1, order + 1)]

    def update(self, delta: np.ndarray) -> None:
        """Extend every path by one straight segment with increments ``delta``.

        Horner form of ``S (x) exp(delta)``, level by level from the top so
        lower levels are still the old values when read.
        """
        b = self.batch
        lv = self.levels
        for n in range(self.order, 0, -1):
            acc = lv[1] + delta * (1.0 / n)
            for k in range(2, n + 1):
                scaled = delta * (1.0 / (n - k + 1))
                acc = lv[k] + (acc[:, :, None] * scaled[:, None, :]).reshape(b, -1)
            lv[n] = acc

    def copy_levels(self) -> list[np.ndarray]:
        return [lv.copy() for lv in self.levels]

    def flat(self) -> np.ndarray:
        """All levels concatenated, shape ``(batch, sum_k d**k)``."""
        return np.concatenate(self.levels, axis=1)

    def functional(self, i: int) -> Signature:
        """Sparse signature of path ``i``."""
        return levels_to_signature([lv[i] for lv in self.levels], self.d, self.order)


def levels_to_signature(levels: Sequence[np.ndarray], d: int, order: int) -> Signature:
    terms: dict[Word, float] = {}
    for n in range(order + 1):
        arr = np.asarray(levels[n]).ravel()
        for idx in np.flatnonzero(arr):
            word = []
            r = int(idx)
            for _ in range(n):
                word.append(r % d + 1)
                r //= d
            terms[tuple(reversed(word))] = float(arr[idx])
    terms[EMPTY] = 1.0
    return Signature._trusted(d, terms, order)


def signature_of_increments(increments: np.ndarray, order: int) -> list[np.ndarray]:
    """Dense signature levels of a batch of paths given as increments ``(batch, steps, d)``."""
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[None]
    eng = BatchSignature(inc.shape[0], inc.shape[2], order)
    for j in range(inc.shape[1]):
        eng.update(inc[:, j, :])
    return eng.levels


def path_signature(path: DiscretePath, order: int) -> Signature:
    """Signature of the piecewise-linear interpolation of ``path``.

    Segment exponentials are chained left to right by Chen's identity.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    levels = signature_of_increments(path.increments[None], order)
    return levels_to_signature([lv[0] for lv in levels], path.dim, order)


def prefix_signatures(path: DiscretePath, order: int) -> list[Signature]:
    """Signatures over ``[t_0, t_k]`` for every node ``k`` (incremental)."""
    eng = BatchSignature(1, path.dim, order)
    out = [Signature.identity(path.dim, order)]
    for delta in path.increments:
        eng.update(delta[None])
        out.append(eng.functional(0))
    return out


def dense_pairing_vector(f: LinearFunctional, order: int) -> np.ndarray:
    """Flatten ``f`` to match :meth:`BatchSignature.flat` so that pairing is a dot product."""
    d = f.d
    offsets = np.cumsum([0] + [d**k for k in range(order + 1)])
    vec = np.zeros(offsets[-1])
    for w, c in f.terms.items():
        if len(w) > order:
            raise ValueError(f"word {w} exceeds order {order}")
        vec[offsets[len(w)] + word_index(w, d)] += c
    return vec


def total_variation(path: DiscretePath) -> float:
    """l1 length of the path (sum of per-segment l1 norms)."""
    return float(np.abs(path.increments).sum())


def iter_words_dense(d: int, n: int) -> Iterable[Word]:
    """Words of length ``n`` in dense-array order."""
    if n == 0:
        yield EMPTY
        return
    for idx in range(d**n):
        word = []
        r = idx
        for _ in range(n):
            word.append(r % d + 1)
            r //= d
        yield tuple(reversed(word))


def factorial_bound(length: float, n: int) -> float:
    return length**n / math.factorial(n)

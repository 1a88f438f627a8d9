"""Option payoffs, signature-payoff regression and pricing.

Prices carry no discounting (zero rates).
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sigsde.path_signature import BatchSignature, DiscretePath
from sigsde.sig_sde import SigSdeParams, simulate_batch
from sigsde.streams import uniform_grid
from sigsde.tensor_algebra import LinearFunctional, Word, all_words, pair

KINDS = ("vanilla_call", "variance_call", "barrier_down_out_call", "barrier_down_in_put")
BARRIER_KINDS = ("barrier_down_out_call", "barrier_down_in_put")
CSV_HEADER = ["kind", "strike", "maturity", "barrier", "price"]
_GRID_TOL = 1e-9


class RankDeficientError(ValueError):
    """Unregularized regression on a design without full column rank."""


@dataclass(frozen=True)
class MarketInstrument:
    kind: str
    strike: float
    maturity: float
    barrier: float | None = None
    price: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown instrument kind {self.kind!r}")
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")
        if self.kind in BARRIER_KINDS:
            if self.barrier is None:
                raise ValueError(f"{self.kind} needs a barrier level")
        elif self.barrier is not None:
            raise ValueError(f"{self.kind} takes no barrier")

    def with_price(self, price: float | None) -> MarketInstrument:
        return MarketInstrument(self.kind, self.strike, self.maturity, self.barrier, price)

    def check_spot(self, x0: float) -> None:
        if self.barrier is not None and not self.barrier < x0:
            raise ValueError(f"barrier {self.barrier} must lie below the initial spot {x0}")


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def instruments_to_csv(instruments: Sequence[MarketInstrument]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for inst in instruments:
        w.writerow([inst.kind, _fmt(inst.strike), _fmt(inst.maturity), _fmt(inst.barrier), _fmt(inst.price)])
    return buf.getvalue()


def instruments_from_csv(text: str) -> list[MarketInstrument]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"instrument CSV header must be {','.join(CSV_HEADER)}")
    out = []
    for r in rows[1:]:
        if not r:
            continue
        kind, strike, maturity, barrier, price = r
        out.append(
            MarketInstrument(
                kind,
                float(strike),
                float(maturity),
                float(barrier) if barrier else None,
                float(price) if price else None,
            )
        )
    return out


def read_instruments(path: str | Path) -> list[MarketInstrument]:
    return instruments_from_csv(Path(path).read_text(encoding="utf-8"))


def write_instruments(path: str | Path, instruments: Sequence[MarketInstrument]) -> None:
    Path(path).write_text(instruments_to_csv(instruments), encoding="utf-8")


# payoff evaluation


def _cut_at(times: np.ndarray, values: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Restrict a batch ``(n_paths, n_nodes)`` to ``[0, t]``, interpolating the end node."""
    if t > times[-1] + _GRID_TOL * max(1.0, times[-1]):
        raise ValueError(f"maturity {t} beyond path horizon {times[-1]}")
    k = int(np.searchsorted(times, t - _GRID_TOL * max(1.0, t)))
    if abs(times[k] - t) <= _GRID_TOL * max(1.0, t):
        return times[: k + 1], values[:, : k + 1]
    w = (t - times[k - 1]) / (times[k] - times[k - 1])
    end = values[:, k - 1] + w * (values[:, k] - values[:, k - 1])
    return np.append(times[:k], t), np.column_stack([values[:, :k], end])


def evaluate_payoffs(times: np.ndarray, values: np.ndarray, inst: MarketInstrument) -> np.ndarray:
    """Payoff of ``inst`` on each row of ``values`` (shape ``(n_paths, n_nodes)``)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if inst.barrier is not None and np.any(values[:, 0] <= inst.barrier):
        raise ValueError("barrier must lie below the initial spot")
    _, v = _cut_at(np.asarray(times, dtype=float), values, inst.maturity)
    x_t = v[:, -1]
    if inst.kind == "vanilla_call":
        return np.maximum(x_t - inst.strike, 0.0)
    if inst.kind == "variance_call":
        qv = np.sum(np.diff(v, axis=1) ** 2, axis=1)
        return np.maximum(qv - inst.strike, 0.0)
    running_min = v.min(axis=1)
    if inst.kind == "barrier_down_out_call":
        return np.where(running_min > inst.barrier, np.maximum(x_t - inst.strike, 0.0), 0.0)
    return np.where(running_min < inst.barrier, np.maximum(inst.strike - x_t, 0.0), 0.0)


def evaluate_payoff(path: DiscretePath, inst: MarketInstrument) -> float:
    """Payoff on a single scalar path. Barriers are monitored at the sample nodes."""
    if path.dim != 1:
        raise ValueError("payoffs are defined on scalar price paths")
    return float(evaluate_payoffs(path.times, path.values[:, 0][None], inst)[0])


# signature payoffs


@dataclass(frozen=True)
class SignaturePayoff:
    """Payoff ``<phi, sig(t, X)_{0,maturity}>`` with ``phi`` over ``{1 = t, 2 = X}``."""

    phi: LinearFunctional
    maturity: float

    def __post_init__(self) -> None:
        if self.phi.d != 2:
            raise ValueError("phi must be a functional over the letters {1, 2}")
        if not self.maturity > 0:
            raise ValueError("maturity must be positive")

    @property
    def order(self) -> int:
        return max(self.phi.degree, 0)

    def to_dict(self) -> dict:
        return {**self.phi.to_dict(), "maturity": self.maturity}

    @classmethod
    def from_dict(cls, data: Mapping) -> SignaturePayoff:
        data = dict(data)
        maturity = float(data.pop("maturity"))
        return cls(LinearFunctional.from_dict(data), maturity)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> SignaturePayoff:
        return cls.from_dict(json.loads(text))


def feature_words(n_phi: int) -> list[Word]:
    return all_words(2, n_phi)


def signature_features(
    times: np.ndarray, values: np.ndarray, maturities: Sequence[float], order: int
) -> dict[float, np.ndarray]:
    """Signature of ``(t, X)`` on ``[0, maturity]`` for each maturity.

    Returns ``{maturity: (n_paths, n_words)}`` with columns in
    :func:`feature_words` order (the empty word first).
    """
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n_paths = values.shape[0]
    pending = sorted(set(float(t) for t in maturities))
    if pending and pending[-1] > times[-1] + _GRID_TOL * max(1.0, times[-1]):
        raise ValueError(f"maturity {pending[-1]} beyond path horizon {times[-1]}")
    eng = BatchSignature(n_paths, 2, order)
    out: dict[float, np.ndarray] = {}
    delta = np.empty((n_paths, 2))
    for j in range(len(times) - 1):
        t0, t1 = times[j], times[j + 1]
        while pending and pending[0] < t1 - _GRID_TOL * max(1.0, t1):
            # maturity strictly inside this segment: snapshot a partial step
            t = pending.pop(0)
            frac = (t - t0) / (t1 - t0)
            part = BatchSignature(n_paths, 2, order)
            part.levels = eng.copy_levels()
            delta[:, 0] = t - t0
            delta[:, 1] = frac * (values[:, j + 1] - values[:, j])
            part.update(delta)
            out[t] = part.flat()
        delta[:, 0] = t1 - t0
        delta[:, 1] = values[:, j + 1] - values[:, j]
        eng.update(delta)
        while pending and abs(pending[0] - t1) <= _GRID_TOL * max(1.0, t1):
            out[pending.pop(0)] = eng.flat()
    if pending:
        raise ValueError(f"maturities {pending} not reached")
    return out


@dataclass(frozen=True)
class FitReport:
    in_sample_rmse: float
    holdout_rmse: float
    payoff_std: float
    n_train: int
    n_holdout: int
    ridge: float
    rank: int
    n_features: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ridge_solve(x: np.ndarray, y: np.ndarray, ridge: float | None, standardize: bool) -> tuple[np.ndarray, float, int]:
    """Ridge regression with an unpenalized intercept in column 0."""
    mean_x = x[:, 1:].mean(axis=0)
    mean_y = y.mean()
    xc = x[:, 1:] - mean_x
    yc = y - mean_y
    spread = xc.std(axis=0)
    # columns constant across paths (pure-time words on a shared grid) carry no information
    live = spread > 1e-12 * np.maximum(1.0, np.abs(mean_x))
    scale = np.where(live, spread, 1.0) if standardize else np.ones(xc.shape[1])
    z = xc[:, live] / scale[live]
    p = z.shape[1]
    rank = int(np.linalg.matrix_rank(z)) if p else 0
    if ridge is None:
        lam = 1e-6 * float(np.einsum("ij,ij->", z, z)) / max(p, 1)
    else:
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        lam = float(ridge)
    if lam == 0.0 and rank < p:
        raise RankDeficientError(f"design has rank {rank} < {p} features; use a positive ridge")
    if p:
        a = np.vstack([z, math.sqrt(lam) * np.eye(p)]) if lam > 0 else z
        b = np.concatenate([yc, np.zeros(p)]) if lam > 0 else yc
        beta_z = np.linalg.lstsq(a, b, rcond=None)[0]
    else:
        beta_z = np.zeros(0)
    beta = np.zeros(xc.shape[1])
    beta[live] = beta_z / scale[live]
    intercept = mean_y - mean_x @ beta
    return np.concatenate([[intercept], beta]), lam, rank + 1


def fit_from_features(
    features: np.ndarray,
    payoffs: np.ndarray,
    maturity: float,
    n_phi: int,
    ridge: float | None = None,
    holdout: float = 0.2,
    standardize: bool = False,
) -> tuple[SignaturePayoff, FitReport]:
    """Regress payoffs on precomputed signature features (columns in :func:`feature_words` order)."""
    words = feature_words(n_phi)
    n, p = features.shape
    if p != len(words):
        raise ValueError(f"expected {len(words)} feature columns, got {p}")
    if n < 10 * p:
        raise ValueError(f"need at least {10 * p} paths for {p} features, got {n}")
    n_hold = int(round(holdout * n))
    n_train = n - n_hold
    coef, lam, rank = _ridge_solve(features[:n_train], payoffs[:n_train], ridge, standardize)
    pred = features @ coef
    resid = pred - payoffs
    in_rmse = float(np.sqrt(np.mean(resid[:n_train] ** 2)))
    hold_rmse = float(np.sqrt(np.mean(resid[n_train:] ** 2))) if n_hold else float("nan")
    phi = LinearFunctional(2, dict(zip(words, coef.tolist())), n_phi)
    report = FitReport(in_rmse, hold_rmse, float(np.std(payoffs)), n_train, n_hold, lam, rank, p)
    return SignaturePayoff(phi, maturity), report


def fit_signature_payoff(
    paths: Sequence[DiscretePath] | tuple[np.ndarray, np.ndarray],
    inst: MarketInstrument,
    n_phi: int,
    ridge: float | None = None,
    holdout: float = 0.2,
    standardize: bool = False,
) -> tuple[SignaturePayoff, FitReport]:
    """Least-squares fit of ``inst``'s payoff onto signature features of ``(t, X)``.

    ``paths`` is a list of scalar paths on a common grid, or ``(times, values)``
    with ``values`` of shape ``(n_paths, n_nodes)``. The last ``holdout``
    fraction of paths is kept out of the fit and scored separately.
    ``ridge=None`` uses ``1e-6 * trace(Gram) / n_features`` on the centered
    design (``standardize=True`` rescales columns to unit variance first);
    ``ridge=0`` demands full column rank.
    """
    if isinstance(paths, tuple):
        times, values = paths
    else:
        times = paths[0].times
        if any(not np.array_equal(p.times, times) for p in paths):
            raise ValueError("paths must share a sampling grid")
        values = np.stack([p.values[:, 0] for p in paths])
    feats = signature_features(times, values, [inst.maturity], n_phi)[inst.maturity]
    y = evaluate_payoffs(times, values, inst)
    return fit_from_features(feats, y, inst.maturity, n_phi, ridge, holdout, standardize)


def price_signature_payoff(payoff: SignaturePayoff, esig: LinearFunctional) -> float:
    """Price ``<phi, E[sig(t, X)_{0,T}]>``."""
    if esig.max_order is not None and esig.max_order < payoff.order:
        raise ValueError(f"expected signature of order {esig.max_order} cannot price order {payoff.order}")
    return pair(payoff.phi, esig)


def mc_price(
    params: SigSdeParams,
    inst: MarketInstrument,
    n_paths: int,
    seed: int,
    grid: np.ndarray | None = None,
) -> tuple[float, float]:
    """Monte Carlo price and standard error under the signature model."""
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    grid = uniform_grid(1.0, 500) if grid is None else grid
    x = simulate_batch(params, grid, n_paths, seed)
    pay = evaluate_payoffs(grid, x, inst)
    return float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(n_paths))


def mc_prices(
    times: np.ndarray, values: np.ndarray, instruments: Sequence[MarketInstrument]
) -> list[tuple[float, float]]:
    """Price several instruments on one simulated batch."""
    n = values.shape[0]
    out = []
    for inst in instruments:
        pay = evaluate_payoffs(times, values, inst)
        out.append((float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(n))))
    return out

"""Synthetic Black-Scholes markets and Monte Carlo oracles.

Under Black-Scholes with zero rates, ``X_t = x0 exp(sigma W_t - sigma^2 t / 2)``.
The model is also an exact member of the signature family: its volatility
``sigma X_t`` is the shuffle exponential of ``sigma (2) - sigma^2/2 (1)``,
which is recovered to any order by :func:`bs_sig_params`.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from sigsde.path_signature import BatchSignature, DiscretePath
from sigsde.payoffs import MarketInstrument, evaluate_payoffs
from sigsde.sig_sde import SigSdeParams
from sigsde.streams import DEFAULT_BLOCK, block_streams, check_grid, uniform_grid
from sigsde.tensor_algebra import LinearFunctional, all_words, geometric_lf


@dataclass(frozen=True)
class BsModel:
    sigma: float = 0.2
    x0: float = 1.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")


def bs_simulate_batch(model: BsModel, grid: np.ndarray, n_paths: int, seed: int,
                      block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """Exact lognormal samples on ``grid``, shape ``(n_paths, len(grid))``."""
    grid = check_grid(grid)
    sq = np.sqrt(np.diff(grid))
    out = np.empty((n_paths, len(grid)))
    for start, stop, rng in block_streams(seed, n_paths, block_size):
        w = np.zeros((stop - start, len(grid)))
        w[:, 1:] = np.cumsum(rng.standard_normal((stop - start, len(grid) - 1)) * sq, axis=1)
        out[start:stop] = model.x0 * np.exp(model.sigma * w - 0.5 * model.sigma**2 * grid)
    return out


def bs_simulate(model: BsModel, grid: np.ndarray, rng: np.random.Generator) -> DiscretePath:
    grid = check_grid(grid)
    w = np.concatenate([[0.0], np.cumsum(rng.standard_normal(len(grid) - 1) * np.sqrt(np.diff(grid)))])
    return DiscretePath(grid, model.x0 * np.exp(model.sigma * w - 0.5 * model.sigma**2 * grid))


def bs_call_price(model: BsModel, strike: float, maturity: float) -> float:
    """Closed-form Black-Scholes call with zero rates."""
    s = model.sigma * math.sqrt(maturity)
    d1 = (math.log(model.x0 / strike) + 0.5 * s * s) / s
    return float(model.x0 * ndtr(d1) - strike * ndtr(d1 - s))


def bs_sig_params(model: BsModel, N: int) -> SigSdeParams:
    """Signature parameters whose volatility approximates ``sigma X_t``.

    ``sigma x0 * sum_k F^{(x) k} / k!`` truncated at length ``N``, with
    ``F = sigma (2) - sigma^2/2 (1)``; pairing with ``sig(t, W)`` gives the
    truncated series of ``sigma x0 exp(sigma W_t - sigma^2 t / 2)``.
    """
    f = LinearFunctional(2, {(2,): model.sigma, (1,): -0.5 * model.sigma**2})
    ell = geometric_lf(f, N) * (model.sigma * model.x0)
    return SigSdeParams(N, ell, model.x0)


# Monte Carlo expected signatures


def leadlag_bm_sampler(T: float = 1.0, n_steps: int = 1000) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Segment increments of the time-augmented lead-lag Brownian path.

    Channels ``(t, W^lag, W^lead)``; each step is a lead move followed by a lag move.
    Returns ``(batch, 2 * n_steps, 3)``.
    """
    dt = T / n_steps

    def sample(rng: np.random.Generator, batch: int) -> np.ndarray:
        dw = rng.standard_normal((batch, n_steps)) * math.sqrt(dt)
        inc = np.zeros((batch, 2 * n_steps, 3))
        inc[:, 0::2, 2] = dw
        inc[:, 1::2, 0] = dt
        inc[:, 1::2, 1] = dw
        return inc

    return sample


def time_bm_sampler(T: float = 1.0, n_steps: int = 1000) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Increments of ``(t, W)``, shape ``(batch, n_steps, 2)``."""
    dt = T / n_steps

    def sample(rng: np.random.Generator, batch: int) -> np.ndarray:
        inc = np.empty((batch, n_steps, 2))
        inc[:, :, 0] = dt
        inc[:, :, 1] = rng.standard_normal((batch, n_steps)) * math.sqrt(dt)
        return inc

    return sample


@dataclass
class MomentAccumulator:
    """Streaming mean and variance (pairwise block merge)."""

    n: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None

    def add(self, x: np.ndarray) -> None:
        nb = x.shape[0]
        mb = x.mean(axis=0)
        m2b = ((x - mb) ** 2).sum(axis=0)
        if self.mean is None:
            self.n, self.mean, self.m2 = nb, mb, m2b
            return
        tot = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / tot)
        self.m2 = self.m2 + m2b + delta**2 * (self.n * nb / tot)
        self.n = tot

    def stderr(self) -> np.ndarray:
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def mc_expected_signature(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    d: int,
    order: int,
    n_paths: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK,
) -> tuple[LinearFunctional, LinearFunctional]:
    """Monte Carlo mean and standard error of the signature, as functionals."""
    if n_paths < 2:
        raise ValueError("need at least two paths")
    acc = MomentAccumulator()
    for start, stop, rng in block_streams(seed, n_paths, block_size):
        inc = sampler(rng, stop - start)
        eng = BatchSignature(stop - start, d, order)
        for j in range(inc.shape[1]):
            eng.update(inc[:, j, :])
        acc.add(eng.flat())
    words = all_words(d, order)
    # flat() is length-then-lex, the same order as all_words
    mean = LinearFunctional(d, dict(zip(words, acc.mean.tolist())), order)
    se = LinearFunctional(d, dict(zip(words, acc.stderr().tolist())), order)
    return mean, se


# market generation


def _steps(lo: float, hi: float, step: float) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + k * step, 10) for k in range(n + 1)]


@dataclass(frozen=True)
class MarketGrid:
    vanilla_strikes: tuple[float, ...] = tuple(_steps(0.5, 1.1, 0.1))
    maturities: tuple[float, ...] = tuple(_steps(0.4, 1.0, 0.05))
    variance_strikes: tuple[float, ...] = tuple(_steps(0.01, 0.04, 0.005))
    barrier_strikes: tuple[float, ...] = tuple(_steps(0.90, 1.02, 0.02))
    barrier_levels: tuple[float, ...] = tuple(_steps(0.60, 0.90, 0.02))
    barrier_maturity: float = 1.0
    heldout_levels: tuple[float, ...] = tuple(_steps(0.70, 0.82, 0.01))

    def calibration_instruments(self) -> list[MarketInstrument]:
        out = [MarketInstrument("vanilla_call", k, t) for t in self.maturities for k in self.vanilla_strikes]
        out += [MarketInstrument("variance_call", k, t) for t in self.maturities for k in self.variance_strikes]
        out += [
            MarketInstrument("barrier_down_out_call", k, self.barrier_maturity, b)
            for b in self.barrier_levels
            for k in self.barrier_strikes
        ]
        return out

    def heldout_instruments(self) -> list[MarketInstrument]:
        return [
            MarketInstrument("barrier_down_in_put", k, self.barrier_maturity, b)
            for b in self.heldout_levels
            for k in self.barrier_strikes
        ]


@dataclass
class Market:
    instruments: list[MarketInstrument]
    stderr: list[float]
    manifest: dict = field(default_factory=dict)


def bs_market(
    model: BsModel,
    instruments: Sequence[MarketInstrument],
    n_paths: int = 100_000,
    seed: int = 0,
    n_steps: int = 500,
    horizon: float | None = None,
) -> Market:
    """Price ``instruments`` under Black-Scholes.

    Vanilla calls use the closed form (standard error zero); everything
    else is Monte Carlo on one batch of exact lognormal paths.
    """
    for inst in instruments:
        inst.check_spot(model.x0)
    horizon = max(i.maturity for i in instruments) if horizon is None else horizon
    grid = uniform_grid(horizon, n_steps)
    need_mc = [i for i in instruments if i.kind != "vanilla_call"]
    paths = bs_simulate_batch(model, grid, n_paths, seed) if need_mc else None
    priced, errs = [], []
    for inst in instruments:
        if inst.kind == "vanilla_call":
            p, se = bs_call_price(model, inst.strike, inst.maturity), 0.0
        else:
            pay = evaluate_payoffs(grid, paths, inst)
            p, se = float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(n_paths))
        priced.append(inst.with_price(p))
        errs.append(se)
    manifest = {
        "model": {"kind": "black_scholes", "sigma": model.sigma, "x0": model.x0},
        "n_paths": n_paths,
        "n_steps": n_steps,
        "horizon": horizon,
        "seed": seed,
        "stderr": errs,
    }
    return Market(priced, errs, manifest)

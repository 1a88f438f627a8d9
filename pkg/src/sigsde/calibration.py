"""Calibration of the signature volatility model to signature-payoff prices.

Model prices are ``<phi_i, E[sig(t, X)_{0,T_i}](ell)>``, a polynomial in the
coordinates of ``ell`` (see
:class:`~sigsde.expected_signature.ExpectedSignaturePolynomial`). The
objective is the weighted sum of squared pricing errors, minimized with
``scipy.optimize.least_squares`` from several deterministic starts.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from sigsde.expected_signature import compiled_polynomial, default_algebra_order
from sigsde.payoffs import SignaturePayoff
from sigsde.sig_sde import SigSdeParams, param_words, report_truncation
from sigsde.tensor_algebra import all_words


class CalibrationError(RuntimeError):
    """Every start failed; ``records`` holds the per-start traces."""

    def __init__(self, message: str, records: list) -> None:
        super().__init__(message)
        self.records = records


@dataclass(frozen=True)
class CalibrationInstrument:
    """A target price for a signature payoff.

    ``kind`` and ``strike`` are optional metadata used to pick a starting
    point from an at-the-money vanilla quote.
    """

    instrument_id: str
    payoff: SignaturePayoff
    price: float
    weight: float = 1.0
    kind: str | None = None
    strike: float | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.price):
            raise ValueError(f"{self.instrument_id}: price must be finite")
        if not self.weight > 0:
            raise ValueError(f"{self.instrument_id}: weight must be positive")


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 8
    seed: int = 0
    tol_g: float = 1e-10
    tol_x: float = 1e-12
    max_iter: int = 500
    perturb_scale: float = 0.5
    fd_step: float = 1e-7

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ValueError("need at least one start")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class CalibrationProblem:
    instruments: list[CalibrationInstrument]
    N: int
    x0: float = 1.0
    algebra_order: int | None = None
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    strict: bool = False

    def __post_init__(self) -> None:
        if not self.instruments:
            raise ValueError("calibration needs at least one instrument")
        ids = [i.instrument_id for i in self.instruments]
        if len(set(ids)) != len(ids):
            raise ValueError("instrument ids must be unique")
        if self.algebra_order is None:
            self.algebra_order = default_algebra_order(self.N)
        self.word_order = max(max(i.payoff.order for i in self.instruments), 0)
        self.words = all_words(2, self.word_order)
        pos = {w: k for k, w in enumerate(self.words)}
        self.phi = np.zeros((len(self.instruments), len(self.words)))
        for r, inst in enumerate(self.instruments):
            for w, c in inst.payoff.phi.terms.items():
                self.phi[r, pos[w]] = c
        self.maturities = sorted({i.payoff.maturity for i in self.instruments})
        mat_pos = {t: k for k, t in enumerate(self.maturities)}
        self.mat_index = np.array([mat_pos[i.payoff.maturity] for i in self.instruments])
        self.market = np.array([i.price for i in self.instruments])
        self.sqrt_w = np.sqrt([i.weight for i in self.instruments])
        self._poly = None
        if self.word_order:
            report_truncation((2,) * self.word_order, self.N, self.algebra_order,
                              T=max(self.maturities), strict=self.strict)

    @property
    def n_params(self) -> int:
        return len(param_words(self.N))

    @property
    def polynomial(self):
        if self._poly is None:
            self._poly = compiled_polynomial(self.N, self.word_order, self.algebra_order)
        return self._poly

    def model_prices(self, vec: np.ndarray) -> np.ndarray:
        e = self.polynomial.evaluate_many(vec, self.maturities)
        # the empty word carries the constant 1; phi's intercept prices through it
        return np.einsum("ij,ij->i", self.phi, e[self.mat_index])

    def residuals(self, vec: np.ndarray) -> np.ndarray:
        return self.sqrt_w * (self.model_prices(vec) - self.market)

    def objective(self, vec: np.ndarray) -> float:
        r = self.residuals(vec)
        return float(r @ r)

    def jacobian(self, vec: np.ndarray) -> np.ndarray:
        """Central differences of the residuals."""
        vec = np.asarray(vec, dtype=float)
        jac = np.empty((len(self.instruments), len(vec)))
        for k in range(len(vec)):
            h = self.config.fd_step * max(1.0, abs(vec[k]))
            up, dn = vec.copy(), vec.copy()
            up[k] += h
            dn[k] -= h
            jac[:, k] = (self.residuals(up) - self.residuals(dn)) / (2 * h)
        return jac

    def initial_vector(self) -> np.ndarray:
        """Only the empty word set, from a Bachelier reading of the ATM vanilla quote."""
        vec = np.zeros(self.n_params)
        atm = [
            i for i in self.instruments
            if i.kind == "vanilla_call" and i.strike is not None
        ]
        sigma = 0.2 * self.x0
        if atm:
            best = min(atm, key=lambda i: (abs(i.strike - self.x0), -i.payoff.maturity))
            t = best.payoff.maturity
            if best.price > 0:
                sigma = best.price * math.sqrt(2 * math.pi / t)
        vec[0] = sigma
        return vec

    def starts(self) -> list[np.ndarray]:
        base = self.initial_vector()
        scale = abs(base[0]) or 1.0
        rng = np.random.default_rng(self.config.seed)
        lengths = np.array([len(w) for w in param_words(self.N)])
        out = [base]
        for _ in range(self.config.n_starts - 1):
            # coordinates of a BS-like functional shrink roughly like scale**(1+|w|)
            spread = self.config.perturb_scale * scale ** (1 + lengths)
            out.append(base + spread * rng.standard_normal(self.n_params))
        return out


@dataclass
class StartRecord:
    start: int
    initial_objective: float
    final_objective: float
    n_evaluations: int
    status: str
    trace: list[float]


@dataclass
class CalibrationResult:
    params: SigSdeParams
    objective: float
    residuals: np.ndarray
    model_prices: np.ndarray
    market_prices: np.ndarray
    instrument_ids: list[str]
    best_start: int
    converged: bool
    message: str
    starts: list[StartRecord]

    @property
    def trace(self) -> list[float]:
        return self.starts[self.best_start].trace

    def residuals_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instrument_id", "model_price", "market_price", "abs_error"])
        for iid, m, p in zip(self.instrument_ids, self.model_prices, self.market_prices):
            w.writerow([iid, repr(float(m)), repr(float(p)), repr(float(abs(m - p)))])
        return buf.getvalue()

    def write_residuals(self, path: str | Path) -> None:
        Path(path).write_text(self.residuals_csv(), encoding="utf-8")

    def summary(self) -> dict:
        return {
            "objective": self.objective,
            "best_start": self.best_start,
            "converged": self.converged,
            "message": self.message,
            "starts": [
                {
                    "start": s.start,
                    "initial_objective": s.initial_objective,
                    "final_objective": s.final_objective,
                    "n_evaluations": s.n_evaluations,
                    "status": s.status,
                }
                for s in self.starts
            ],
        }


def _run_start(problem: CalibrationProblem, k: int, x_init: np.ndarray) -> tuple[np.ndarray, StartRecord, bool]:
    trace: list[float] = []

    def fun(v: np.ndarray) -> np.ndarray:
        r = problem.residuals(v)
        trace.append(float(r @ r))
        return r

    f0 = problem.objective(x_init)
    cfg = problem.config
    try:
        sol = least_squares(
            fun,
            x_init,
            jac=problem.jacobian,
            method="trf",
            xtol=cfg.tol_x,
            gtol=cfg.tol_g,
            ftol=None,
            max_nfev=cfg.max_iter,
            x_scale="jac",
        )
        x, status, converged = sol.x, sol.message, sol.status > 0
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        x, status, converged = x_init, f"failed: {exc}", False
    f1 = problem.objective(x)
    if not math.isfinite(f1) or f1 > f0:
        x, f1 = x_init, f0
    rec = StartRecord(k, f0, f1, len(trace), status, trace)
    return x, rec, converged


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Multi-start least squares. Never returns worse than the best starting point.

    Ties between starts go to the lower start index, so results are
    deterministic for a fixed configuration.
    """
    best = None
    records = []
    for k, x_init in enumerate(problem.starts()):
        x, rec, conv = _run_start(problem, k, x_init)
        records.append(rec)
        if best is None or rec.final_objective < best[1]:
            best = (x, rec.final_objective, k, conv, rec.status)
    if all(r.status.startswith("failed") for r in records):
        raise CalibrationError("all starts failed: " + "; ".join(r.status for r in records), records)
    x, obj, k, conv, msg = best
    best_init = min(r.initial_objective for r in records)
    assert obj <= best_init
    params = SigSdeParams.from_vector(problem.N, x, problem.x0)
    model = problem.model_prices(x)
    return CalibrationResult(
        params=params,
        objective=obj,
        residuals=problem.residuals(x),
        model_prices=model,
        market_prices=problem.market.copy(),
        instrument_ids=[i.instrument_id for i in problem.instruments],
        best_start=k,
        converged=conv,
        message=msg,
        starts=records,
    )


def benchmark_objective(problem: CalibrationProblem, params: SigSdeParams) -> float:
    """Objective at a reference parameter (for example the BS lift)."""
    if params.N != problem.N:
        raise ValueError("reference parameter has a different model order")
    return problem.objective(params.to_vector())


def problem_to_json(problem: CalibrationProblem) -> str:
    data = {
        "N": problem.N,
        "x0": problem.x0,
        "algebra_order": problem.algebra_order,
        "instruments": [
            {
                "instrument_id": i.instrument_id,
                "payoff": i.payoff.to_dict(),
                "price": i.price,
                "weight": i.weight,
                "kind": i.kind,
                "strike": i.strike,
            }
            for i in problem.instruments
        ],
    }
    return json.dumps(data, sort_keys=True)

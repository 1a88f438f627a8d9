"""Command-line driver: ``sigsde <command> --config run.json [--seed S] [--paths N] [--out DIR]``.

Stages share one working directory (``--out``):

* ``gen-market``   -> ``market.csv``, ``heldout.csv``, ``market_manifest.json``
* ``fit-payoffs``  -> ``payoffs.json``, ``fit_report.csv``
* ``calibrate``    -> ``params.json``, ``calibration.json``, ``residuals.csv``
* ``price``        -> ``prices.csv``
* ``simulate``     -> ``paths.csv``

Exit codes: 0 success, 2 invalid configuration or inputs, 3 numerical failure.
Errors are written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from sigsde.calibration import (
    CalibrationError,
    CalibrationInstrument,
    CalibrationProblem,
    OptimizerConfig,
    calibrate,
)
from sigsde.expected_signature import compiled_polynomial, default_algebra_order
from sigsde.market_lab import BsModel, MarketGrid, bs_market, bs_sig_params, bs_simulate_batch
from sigsde.payoffs import (
    MarketInstrument,
    RankDeficientError,
    SignaturePayoff,
    evaluate_payoffs,
    fit_from_features,
    instruments_to_csv,
    read_instruments,
    signature_features,
)
from sigsde.sig_sde import SigSdeParams, TruncationError, TruncationWarning, simulate_batch
from sigsde.streams import uniform_grid

SCHEMA_VERSION = 1

# independent seed streams per stage, derived from the run seed
_STAGE = {"gen-market": 1, "heldout": 2, "fit-payoffs": 3, "price": 4, "simulate": 5}


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Strict):
    vanilla_strikes: list[float] = Field(default_factory=lambda: list(MarketGrid().vanilla_strikes))
    maturities: list[float] = Field(default_factory=lambda: list(MarketGrid().maturities))
    variance_strikes: list[float] = Field(default_factory=lambda: list(MarketGrid().variance_strikes))
    barrier_strikes: list[float] = Field(default_factory=lambda: list(MarketGrid().barrier_strikes))
    barrier_levels: list[float] = Field(default_factory=lambda: list(MarketGrid().barrier_levels))
    barrier_maturity: float = 1.0
    heldout_levels: list[float] = Field(default_factory=lambda: list(MarketGrid().heldout_levels))

    @model_validator(mode="after")
    def _non_empty(self) -> GridSpec:
        if not self.maturities or not (self.vanilla_strikes or self.variance_strikes or self.barrier_strikes):
            raise ValueError("market grid is empty")
        return self

    def to_grid(self) -> MarketGrid:
        return MarketGrid(
            tuple(self.vanilla_strikes),
            tuple(self.maturities),
            tuple(self.variance_strikes),
            tuple(self.barrier_strikes),
            tuple(self.barrier_levels),
            self.barrier_maturity,
            tuple(self.heldout_levels),
        )


class MarketConfig(_Strict):
    sigma: float = Field(0.2, gt=0)
    x0: float = Field(1.0, gt=0)
    n_paths: int = Field(100_000, ge=2)
    n_steps: int = Field(500, ge=1)
    grid: GridSpec = Field(default_factory=GridSpec)


class PayoffConfig(_Strict):
    n_phi: int = Field(4, ge=0)
    n_paths: int = Field(100_000, ge=2)
    n_steps: int = Field(500, ge=1)
    ridge: float | None = Field(None, ge=0)
    holdout: float = Field(0.2, ge=0, lt=1)
    standardize: bool = False
    reference: Literal["black_scholes"] = "black_scholes"


class CalibrationConfig(_Strict):
    N: int = Field(4, ge=1)
    algebra_order: int | None = Field(None, ge=1)
    n_starts: int = Field(8, ge=1)
    tol_g: float = Field(1e-10, gt=0)
    tol_x: float = Field(1e-12, gt=0)
    max_iter: int = Field(500, ge=1)
    perturb_scale: float = Field(0.5, ge=0)
    strict_truncation: bool = False
    weights: dict[str, float] = Field(default_factory=dict)


class PricingConfig(_Strict):
    mc: bool = True
    n_paths: int = Field(100_000, ge=2)
    n_steps: int = Field(500, ge=1)
    instruments: Literal["heldout", "market", "all"] = "heldout"


class SimulateConfig(_Strict):
    n_paths: int = Field(10, ge=1)
    n_steps: int = Field(500, ge=1)
    T: float = Field(1.0, gt=0)
    params: Literal["calibrated", "black_scholes"] = "calibrated"


class RunConfig(_Strict):
    schema_version: Literal[1] = 1
    seed: int = Field(0, ge=0)
    market: MarketConfig = Field(default_factory=MarketConfig)
    payoffs: PayoffConfig = Field(default_factory=PayoffConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    pricing: PricingConfig = Field(default_factory=PricingConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)

    def with_paths(self, n: int) -> RunConfig:
        return self.model_copy(
            update={
                "market": self.market.model_copy(update={"n_paths": n}),
                "payoffs": self.payoffs.model_copy(update={"n_paths": n}),
                "pricing": self.pricing.model_copy(update={"n_paths": n}),
                "simulate": self.simulate.model_copy(update={"n_paths": n}),
            }
        )


def load_config(path: str | Path | None, seed: int | None = None, paths: int | None = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        cfg = RunConfig.model_validate(data)
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
        if paths is not None:
            if paths < 2:
                raise ConfigError("--paths must be at least 2")
            cfg = cfg.with_paths(paths)
        return cfg
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from exc


def stage_seed(cfg: RunConfig, stage: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, _STAGE[stage]])


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"missing input {path.name}; run the earlier stage first") from exc


def _instrument_id(prefix: str, k: int) -> str:
    return f"{prefix}{k:04d}"


def _read_stage_instruments(out: Path, name: str) -> list[MarketInstrument]:
    try:
        return read_instruments(out / name)
    except OSError as exc:
        raise ConfigError(f"missing input {name}; run gen-market first") from exc


# commands


def cmd_gen_market(cfg: RunConfig, out: Path) -> None:
    model = BsModel(cfg.market.sigma, cfg.market.x0)
    grid = cfg.market.grid.to_grid()
    horizon = max([*grid.maturities, grid.barrier_maturity])
    cal = bs_market(model, grid.calibration_instruments(), cfg.market.n_paths,
                    stage_seed(cfg, "gen-market"), cfg.market.n_steps, horizon)
    held = grid.heldout_instruments()
    ho = bs_market(model, held, cfg.market.n_paths, stage_seed(cfg, "heldout"), cfg.market.n_steps, horizon) \
        if held else None
    (out / "market.csv").write_text(instruments_to_csv(cal.instruments), encoding="utf-8")
    (out / "heldout.csv").write_text(instruments_to_csv(ho.instruments if ho else []), encoding="utf-8")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "numpy": np.__version__,
        "bit_generator": "PCG64",
        "market": {**cal.manifest, "seed": [cfg.seed, _STAGE["gen-market"]]},
        "heldout": {**ho.manifest, "seed": [cfg.seed, _STAGE["heldout"]]} if ho else None,
    }
    _dump_json(out / "market_manifest.json", manifest)


def cmd_fit_payoffs(cfg: RunConfig, out: Path) -> None:
    pc = cfg.payoffs
    cal = _read_stage_instruments(out, "market.csv")
    held = _read_stage_instruments(out, "heldout.csv")
    tagged = [(_instrument_id("m", k), i) for k, i in enumerate(cal)] + \
             [(_instrument_id("h", k), i) for k, i in enumerate(held)]
    horizon = max(i.maturity for _, i in tagged)
    grid = uniform_grid(horizon, pc.n_steps)
    model = BsModel(cfg.market.sigma, cfg.market.x0)
    paths = bs_simulate_batch(model, grid, pc.n_paths, stage_seed(cfg, "fit-payoffs"))
    feats = signature_features(grid, paths, sorted({i.maturity for _, i in tagged}), pc.n_phi)
    entries, rows = [], []
    for iid, inst in tagged:
        y = evaluate_payoffs(grid, paths, inst)
        sp, rep = fit_from_features(feats[inst.maturity], y, inst.maturity, pc.n_phi,
                                    pc.ridge, pc.holdout, pc.standardize)
        entries.append({
            "instrument_id": iid,
            "set": "market" if iid.startswith("m") else "heldout",
            "instrument": _inst_dict(inst),
            "payoff": sp.to_dict(),
            "report": rep.to_dict(),
        })
        rows.append([iid, inst.kind, repr(rep.in_sample_rmse), repr(rep.holdout_rmse), repr(rep.payoff_std)])
    _dump_json(out / "payoffs.json", {"schema_version": SCHEMA_VERSION, "n_phi": pc.n_phi, "payoffs": entries})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instrument_id", "kind", "in_sample_rmse", "holdout_rmse", "payoff_std"])
    w.writerows(rows)
    (out / "fit_report.csv").write_text(buf.getvalue(), encoding="utf-8")


def _inst_dict(inst: MarketInstrument) -> dict:
    return {"kind": inst.kind, "strike": inst.strike, "maturity": inst.maturity,
            "barrier": inst.barrier, "price": inst.price}


def _inst_from_dict(d: dict) -> MarketInstrument:
    return MarketInstrument(d["kind"], d["strike"], d["maturity"], d["barrier"], d["price"])


def _load_payoffs(out: Path) -> list[dict]:
    return _read_json(out / "payoffs.json")["payoffs"]


def build_problem(cfg: RunConfig, entries: list[dict]) -> CalibrationProblem:
    cc = cfg.calibration
    unknown = set(cc.weights) - {e["instrument_id"] for e in entries}
    if unknown:
        raise ConfigError(f"weights given for unknown instruments: {sorted(unknown)}")
    insts = []
    for e in entries:
        if e["set"] != "market":
            continue
        inst = _inst_from_dict(e["instrument"])
        insts.append(CalibrationInstrument(
            e["instrument_id"], SignaturePayoff.from_dict(e["payoff"]), inst.price,
            cc.weights.get(e["instrument_id"], 1.0), inst.kind, inst.strike,
        ))
    opt = OptimizerConfig(cc.n_starts, cfg.seed, cc.tol_g, cc.tol_x, cc.max_iter, cc.perturb_scale)
    return CalibrationProblem(insts, cc.N, cfg.market.x0, cc.algebra_order, opt, cc.strict_truncation)


def cmd_calibrate(cfg: RunConfig, out: Path) -> None:
    problem = build_problem(cfg, _load_payoffs(out))
    res = calibrate(problem)
    if not all(math.isfinite(x) for x in res.params.to_vector()) or not math.isfinite(res.objective):
        raise NumericalError("calibration produced non-finite parameters")
    bs = bs_sig_params(BsModel(cfg.market.sigma, cfg.market.x0), cfg.calibration.N)
    _dump_json(out / "params.json", res.params.to_dict())
    summary = res.summary()
    summary["algebra_order"] = problem.algebra_order
    summary["n_instruments"] = len(problem.instruments)
    summary["n_params"] = problem.n_params
    summary["benchmark_objective"] = problem.objective(bs.to_vector())
    summary["trace"] = res.trace
    _dump_json(out / "calibration.json", summary)
    res.write_residuals(out / "residuals.csv")


def _params_for(cfg: RunConfig, out: Path, which: str) -> SigSdeParams:
    if which == "black_scholes":
        return bs_sig_params(BsModel(cfg.market.sigma, cfg.market.x0), cfg.calibration.N)
    return SigSdeParams.from_dict(_read_json(out / "params.json"))


def cmd_price(cfg: RunConfig, out: Path) -> None:
    pc = cfg.pricing
    params = _params_for(cfg, out, "calibrated")
    entries = [e for e in _load_payoffs(out) if pc.instruments == "all" or e["set"] == pc.instruments]
    if not entries:
        raise ConfigError(f"no fitted payoffs in set {pc.instruments!r}")
    order = cfg.calibration.algebra_order or default_algebra_order(params.N)
    payoffs = [SignaturePayoff.from_dict(e["payoff"]) for e in entries]
    word_order = max(p.order for p in payoffs)
    poly = compiled_polynomial(params.N, word_order, order)
    mats = sorted({p.maturity for p in payoffs})
    esig = dict(zip(mats, poly.evaluate_many(params.to_vector(), mats)))
    pos = {w: k for k, w in enumerate(poly.words)}
    insts = [_inst_from_dict(e["instrument"]) for e in entries]
    if pc.mc:
        grid = uniform_grid(max(mats), pc.n_steps)
        paths = simulate_batch(params, grid, pc.n_paths, stage_seed(cfg, "price"))
        if not np.all(np.isfinite(paths)):
            raise NumericalError("simulated paths are not finite")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instrument_id", "kind", "strike", "maturity", "barrier", "market_price",
                "algebraic_price", "mc_price", "mc_se", "holdout_rmse"])
    for e, sp, inst in zip(entries, payoffs, insts):
        vec = np.zeros(len(poly.words))
        for word, c in sp.phi.terms.items():
            vec[pos[word]] = c
        alg = float(vec @ esig[sp.maturity])
        mc_p = mc_se = ""
        if pc.mc:
            pay = evaluate_payoffs(grid, paths, inst)
            mc_p = repr(float(pay.mean()))
            mc_se = repr(float(pay.std(ddof=1) / math.sqrt(pc.n_paths)))
        w.writerow([e["instrument_id"], inst.kind, repr(inst.strike), repr(inst.maturity),
                    "" if inst.barrier is None else repr(inst.barrier),
                    "" if inst.price is None else repr(inst.price), repr(alg), mc_p, mc_se,
                    repr(e["report"]["holdout_rmse"])])
    (out / "prices.csv").write_text(buf.getvalue(), encoding="utf-8")


def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    sc = cfg.simulate
    params = _params_for(cfg, out, sc.params)
    grid = uniform_grid(sc.T, sc.n_steps)
    paths = simulate_batch(params, grid, sc.n_paths, stage_seed(cfg, "simulate"))
    if not np.all(np.isfinite(paths)):
        raise NumericalError("simulated paths are not finite")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time"] + [f"path{k}" for k in range(sc.n_paths)])
    for j, t in enumerate(grid):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in paths[:, j]])
    (out / "paths.csv").write_text(buf.getvalue(), encoding="utf-8")


COMMANDS = {
    "gen-market": cmd_gen_market,
    "fit-payoffs": cmd_fit_payoffs,
    "calibrate": cmd_calibrate,
    "price": cmd_price,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigsde", description="Signature volatility model pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--paths", type=int, help="override every Monte Carlo path count")
        p.add_argument("--out", default=".", help="working directory for inputs and outputs")
    return parser


def _fail(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.paths)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            # truncation is reported in calibration.json through algebra_order
            warnings.simplefilter("ignore", TruncationWarning)
            with np.errstate(over="raise", invalid="raise"):
                COMMANDS[args.command](cfg, out)
    except (ConfigError, KeyError, TruncationError, RankDeficientError) as exc:
        return _fail(2, "config", exc)
    except (NumericalError, CalibrationError, FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        return _fail(3, "numerical", exc)
    except ValueError as exc:
        return _fail(2, "config", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Signature volatility models: path signatures, expected signatures, simulation and calibration."""

from sigsde.calibration import CalibrationProblem, CalibrationResult, calibrate
from sigsde.expected_signature import leadlag_bm_expected_signature, model_expected_signature
from sigsde.market_lab import BsModel, bs_call_price, bs_sig_params
from sigsde.path_signature import DiscretePath, Signature, path_signature
from sigsde.payoffs import MarketInstrument, SignaturePayoff, fit_signature_payoff, mc_price
from sigsde.sig_sde import SigSdeParams, simulate, simulate_batch
from sigsde.tensor_algebra import LinearFunctional, MultiIndex

__version__ = "0.1.0"

__all__ = [
    "BsModel",
    "CalibrationProblem",
    "CalibrationResult",
    "DiscretePath",
    "LinearFunctional",
    "MarketInstrument",
    "MultiIndex",
    "SigSdeParams",
    "Signature",
    "SignaturePayoff",
    "bs_call_price",
    "bs_sig_params",
    "calibrate",
    "fit_signature_payoff",
    "leadlag_bm_expected_signature",
    "mc_price",
    "model_expected_signature",
    "path_signature",
    "simulate",
    "simulate_batch",
]

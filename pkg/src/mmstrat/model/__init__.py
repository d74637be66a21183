"""Market model: coefficient forms, order flow, price and factor processes."""

from .config import config_hash, load_config
from .factor import FactorModel
from .flow import FlowMoments, OrderFlowSpec, flow_moments
from .forms import REGISTRY, build_form
from .price import PriceModel
from .spec import CellCoeffs, EffectiveParams, ModelSpec, RawParams, build_model
from .validate import Report, assumption_c, validate

__all__ = [
    "CellCoeffs", "EffectiveParams", "FactorModel", "FlowMoments", "ModelSpec", "OrderFlowSpec",
    "PriceModel", "REGISTRY", "RawParams", "Report", "assumption_c", "build_form", "build_model",
    "config_hash", "flow_moments", "load_config", "validate",
]

"""Outbreak detection for count time series."""

from .catcusum import CatControl, categorical_cusum, shift_logit, shift_multinomial_intercept
from .ears import ears_c1
from .farrington import FarringtonControl, farrington_flexible
from .glr import GlrControl, cases_needed, glr_run
from .runlength import CusumScheme, calibrate_threshold, runlength_markov, runlength_montecarlo
from .sts import MonitoringRange, StsFrame, SurveillanceResult, aggregate, new_sts, subset

__version__ = "0.1.0"

__all__ = [
    "CatControl",
    "CusumScheme",
    "FarringtonControl",
    "GlrControl",
    "MonitoringRange",
    "StsFrame",
    "SurveillanceResult",
    "aggregate",
    "calibrate_threshold",
    "cases_needed",
    "categorical_cusum",
    "ears_c1",
    "farrington_flexible",
    "glr_run",
    "new_sts",
    "runlength_markov",
    "runlength_montecarlo",
    "shift_logit",
    "shift_multinomial_intercept",
    "subset",
]

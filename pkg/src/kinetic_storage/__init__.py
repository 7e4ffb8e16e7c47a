"""Mean-field control of residential kinetic batteries.

Seasonal OU models for price and net load, a kinetic battery, a deep BSDE
solver built on a small in-house autodiff engine, and analytic oracles.
"""
__version__ = "0.1.0"

from .battery import BatteryParams, StateVector
from .calibrate import ObservedSeries, SeasonalOUCalibrator, calibrate
from .costs import CostParams
from .models import RegimeSchedule, SeasonalOuSpec, SeasonalProfile
from .oracles import LqConfig, LqProblem
from .problem import KineticStorageProblem
from .solver import FBSDEController, TrainingConfig, train

__all__ = [
    "BatteryParams", "StateVector", "ObservedSeries", "SeasonalOUCalibrator", "calibrate",
    "CostParams", "RegimeSchedule", "SeasonalOuSpec", "SeasonalProfile", "LqConfig", "LqProblem",
    "KineticStorageProblem", "FBSDEController", "TrainingConfig", "train",
]

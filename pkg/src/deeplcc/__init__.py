"""Data-enabled predictive leading cruise control for mixed traffic platoons."""

__version__ = "0.1.0"

from .controller import ControllerParams, DeepLcc, DeepLccController, OnlineWindow, run_receding_horizon
from .data import TrajectoryDataset, collect_dataset, hankel, is_persistently_exciting, partition
from .linear_model import (
    analyze_controllability, analyze_observability, build_model, discretize, linearize_hdv, model_from_config,
)
from .mpc import Mpc, MpcController, MpcParams
from .qp import QpSolver, solve_qp
from .scenarios import FuelModel, brake_profile, eudc_like_profile, fuel_rate, run_comparison, total_fuel
from .vehicle import OvmParams, PlatoonConfig, simulate_closed_loop

__all__ = [
    "ControllerParams", "DeepLcc", "DeepLccController", "OnlineWindow", "run_receding_horizon",
    "TrajectoryDataset", "collect_dataset", "hankel", "is_persistently_exciting", "partition",
    "analyze_controllability", "analyze_observability", "build_model", "discretize", "linearize_hdv",
    "model_from_config", "Mpc", "MpcController", "MpcParams", "QpSolver", "solve_qp", "FuelModel",
    "brake_profile", "eudc_like_profile", "fuel_rate", "run_comparison", "total_fuel", "OvmParams",
    "PlatoonConfig", "simulate_closed_loop",
]

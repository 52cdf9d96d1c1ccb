"""Delayed evolutionary dynamics in population games with revision-rate tuning."""

from ._backend import BACKEND
from .delayed_dynamics import DelayMatrix, Trajectory, init, run, run_baseline_edm, step
from .games import Game, linear_game, rps, zero_game
from .revision import CertifiedConstants, ProtocolParams, compute_constants
from .tuner import TunerConfig

__all__ = [
    "BACKEND", "CertifiedConstants", "DelayMatrix", "Game", "ProtocolParams", "Trajectory",
    "TunerConfig", "compute_constants", "init", "linear_game", "rps", "run", "run_baseline_edm",
    "step", "zero_game",
]
__version__ = "0.1.0"

from .data import ObservationSet, gen_data
from .model import ForwardModel, SolveCounters, SolverError
from .presets import adv1d, adv2d, assemble, elast2d

__all__ = [
    "ForwardModel", "SolveCounters", "SolverError", "ObservationSet",
    "gen_data", "assemble", "adv1d", "adv2d", "elast2d",
]

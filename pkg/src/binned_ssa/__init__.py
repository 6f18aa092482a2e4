from .binned import BinnedEventTable, BinnedNRM, BinPolicy
from .direct import CompositionRejectionDirect, GroupedDirect, LinearDirect
from .engine import Method, RunConfig, SimulationModel, Trajectory, run, run_ensemble
from .event_source import EventSource, StepCounters
from .heap import HeapNRM
from .model import (
    ExactnessError,
    ModelError,
    ReactionNetwork,
    SimulationError,
    SSAException,
    SystemState,
    parse_model,
    read_model,
)
from .spatial import NsmQueue, SpatialModel, elf_ehrenberg_model, flatten_rdme

__version__ = "0.1.0"

__all__ = [
    "BinnedEventTable",
    "BinnedNRM",
    "BinPolicy",
    "CompositionRejectionDirect",
    "EventSource",
    "ExactnessError",
    "GroupedDirect",
    "HeapNRM",
    "LinearDirect",
    "Method",
    "ModelError",
    "NsmQueue",
    "ReactionNetwork",
    "RunConfig",
    "SimulationError",
    "SimulationModel",
    "SSAException",
    "SpatialModel",
    "StepCounters",
    "SystemState",
    "Trajectory",
    "elf_ehrenberg_model",
    "flatten_rdme",
    "parse_model",
    "read_model",
    "run",
    "run_ensemble",
]

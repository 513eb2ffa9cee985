"""CAPS / SPS sidelink scheduling simulator and AoI analysis toolkit."""

from .grid import GridConfig, ResourceLocation, SimClock, subchannels_per_rri, period_index_of
from .engine import ExperimentConfig, RunResult, run, sweep, adapt_rri
from .scenario import ChannelModel, TrafficModel

__all__ = [
    "GridConfig", "ResourceLocation", "SimClock", "subchannels_per_rri", "period_index_of",
    "ExperimentConfig", "RunResult", "run", "sweep", "adapt_rri", "ChannelModel", "TrafficModel",
]
__version__ = "0.1.0"

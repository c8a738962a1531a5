"""Spatio-temporal forecasting via mixed-graph regularization and unrolled ADMM."""

from .config import PipelineConfig
from .graphs import MixedGraph, PhysicalGraph
from .pipeline import PipelineContext, Sample, Standardizer, run_forecast
from .priors import PriorWeights
from .solver import AdmmState, CgSchedule, LayerParams, admm_block, cg_solve

__all__ = [
    "AdmmState",
    "CgSchedule",
    "LayerParams",
    "MixedGraph",
    "PhysicalGraph",
    "PipelineConfig",
    "PipelineContext",
    "PriorWeights",
    "Sample",
    "Standardizer",
    "admm_block",
    "cg_solve",
    "run_forecast",
]

"""Pipeline configuration: dataclasses plus JSON load/save.

The JSON document mirrors the dataclass sections: {graph, solver, layers,
heads, tuner, data}. Layer parameters accept a scalar, a per-block list, or a
full per-block-per-layer table; they are normalized to (blocks, layers)
arrays internally. rho fields may be null, meaning sqrt(N / total instants)
resolved at run time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attention import DEFAULT_FEATURE_DIM, DEFAULT_SPATIAL_DIM, MetricBank, MetricMatrix
from .solver import (
    DEFAULT_CG_INIT,
    DEFAULT_CG_ITERS,
    DEFAULT_EXACT_TOL,
    VARIANTS,
    CgSchedule,
    LayerParams,
)

DEFAULT_MU = 3.0
DEFAULT_RESIDUAL = 0.3
EXTRAPOLATION_METHODS = ("hold-last", "linear-trend", "seasonal-naive")


def _expand_table(value, blocks: int, layers: int, name: str) -> np.ndarray | None:
    """Normalize scalar / per-block / per-layer input to a (B, M) array."""
    if value is None:
        return None
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((blocks, layers), float(arr))
    if arr.ndim == 1:
        if len(arr) != blocks:
            raise ValueError(f"{name}: per-block list must have length {blocks}")
        return np.repeat(arr[:, None], layers, axis=1)
    if arr.shape == (blocks, layers):
        return arr.copy()
    raise ValueError(f"{name}: expected scalar, ({blocks},) or ({blocks},{layers}) values")


@dataclass
class GraphSettings:
    k: int = 4
    window: int = 6
    spatial_dim: int = DEFAULT_SPATIAL_DIM
    feature_dim: int = DEFAULT_FEATURE_DIM
    feature_seed: int = 0
    aggregate_neighbors: bool = False
    swish_beta: float | None = None
    projection: list | None = None  # explicit (K, E) matrix overrides the seeded one
    projection_bias: list | None = None


@dataclass
class SolverSettings:
    mode: str = "full"
    cg_mode: str = "unrolled"
    cg_iters: int = DEFAULT_CG_ITERS
    cg_alpha: float | list = DEFAULT_CG_INIT
    cg_beta: float | list = DEFAULT_CG_INIT
    cg_tol: float = DEFAULT_EXACT_TOL
    exact_cap: int | None = None

    def __post_init__(self):
        if self.mode not in VARIANTS:
            raise ValueError(f"unknown solver mode {self.mode!r}")

    def schedule(self) -> CgSchedule:
        if self.cg_mode == "exact":
            return CgSchedule.exact(tol=self.cg_tol, iters=self.exact_cap)
        return CgSchedule.unrolled(self.cg_iters, self.cg_alpha, self.cg_beta)


@dataclass
class LayerSettings:
    blocks: int = 5
    layers: int = 25
    mu_u: object = DEFAULT_MU
    mu_d2: object = DEFAULT_MU
    mu_d1: object = DEFAULT_MU
    rho: object = None  # None -> sqrt(N / n_instants) at run time
    rho_u: object = None
    rho_d: object = None
    residual: object = DEFAULT_RESIDUAL  # per-block mixing into the running signal

    def __post_init__(self):
        b, m = self.blocks, self.layers
        if b < 0 or m < 1:
            raise ValueError("need blocks >= 0 and layers >= 1")
        for name in ("mu_u", "mu_d2", "mu_d1", "rho", "rho_u", "rho_d"):
            setattr(self, name, _expand_table(getattr(self, name), b, m, name))
        res = np.asarray(
            np.broadcast_to(np.asarray(self.residual, dtype=np.float64), (b,))
        ).copy()
        if np.any((res < 0) | (res > 1)):
            raise ValueError("residual coefficients must lie in [0, 1]")
        self.residual = res

    def layer_params(self, block: int, default_rho: float) -> list[LayerParams]:
        def col(tab):
            return tab[block] if tab is not None else np.full(self.layers, default_rho)

        mu_u, mu_d2, mu_d1 = self.mu_u[block], self.mu_d2[block], self.mu_d1[block]
        rho, rho_u, rho_d = col(self.rho), col(self.rho_u), col(self.rho_d)
        return [
            LayerParams(mu_u[m], mu_d2[m], mu_d1[m], rho[m], rho_u[m], rho_d[m])
            for m in range(self.layers)
        ]


@dataclass
class HeadSettings:
    count: int = 4
    merge: list | None = None  # None -> uniform 1/H
    metric_scale_u: list | None = None
    metric_scale_d: list | None = None
    metric_overrides: list = field(default_factory=list)

    def __post_init__(self):
        h = self.count
        if h < 1:
            raise ValueError("need at least one head")
        self.merge = (
            np.full(h, 1.0 / h) if self.merge is None else np.asarray(self.merge, dtype=float)
        )
        if len(self.merge) != h or not np.all(np.isfinite(self.merge)):
            raise ValueError("merge weights must be finite with one entry per head")
        # default scales spread the heads apart so they are distinct untrained
        if self.metric_scale_u is None:
            self.metric_scale_u = _default_scales(h)
        if self.metric_scale_d is None:
            self.metric_scale_d = _default_scales(h)
        self.metric_scale_u = np.asarray(self.metric_scale_u, dtype=float)
        self.metric_scale_d = np.asarray(self.metric_scale_d, dtype=float)

    def build_bank(self, n_instants: int, window: int, feature_dim: int) -> MetricBank:
        bank = MetricBank.default(
            n_instants,
            window,
            feature_dim,
            heads=self.count,
            scale_u=self.metric_scale_u,
            scale_d=self.metric_scale_d,
        )
        for entry in self.metric_overrides:
            factor = MetricMatrix(np.asarray(entry["factor"], dtype=float))
            h = int(entry["head"])
            if "instant" in entry:
                bank.undirected[h][int(entry["instant"])] = factor
            elif "lag" in entry:
                bank.directed[h][int(entry["lag"]) - 1] = factor
            else:
                raise ValueError("metric override needs an 'instant' or 'lag' key")
        return bank


def _default_scales(h: int) -> np.ndarray:
    if h == 1:
        return np.ones(1)
    return 0.8 + 0.4 * np.arange(h) / (h - 1)


@dataclass
class TunerSettings:
    iterations: int = 100
    seed: int = 7
    step: float = 0.2
    perturb: float = 0.15
    decay_exponent: float = 0.602
    perturb_exponent: float = 0.101
    eval_samples: int = 4


@dataclass
class DataSettings:
    stride: int = 3
    ratios: tuple = (0.6, 0.2, 0.2)
    horizon: int = 6
    history: int = 12  # observed steps T+1
    mape_floor: float = 1.0
    extrapolation: str = "hold-last"
    trend_window: int = 6
    seasonal_period: int = 288

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        ratios = tuple(float(r) for r in self.ratios)
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError("ratios must be three numbers summing to 1")
        self.ratios = ratios
        if self.extrapolation not in EXTRAPOLATION_METHODS:
            raise ValueError(
                f"unknown extrapolation {self.extrapolation!r}; expected {EXTRAPOLATION_METHODS}"
            )

    @property
    def n_instants(self) -> int:
        return self.history + self.horizon


@dataclass
class PipelineConfig:
    graph: GraphSettings = field(default_factory=GraphSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    layers: LayerSettings = field(default_factory=LayerSettings)
    heads: HeadSettings = field(default_factory=HeadSettings)
    tuner: TunerSettings = field(default_factory=TunerSettings)
    data: DataSettings = field(default_factory=DataSettings)

    def default_rho(self, n_stations: int) -> float:
        return float(np.sqrt(n_stations / self.data.n_instants))

    def to_dict(self) -> dict:
        lay = self.layers
        return {
            "graph": {
                "k": self.graph.k,
                "window": self.graph.window,
                "spatial_dim": self.graph.spatial_dim,
                "feature_dim": self.graph.feature_dim,
                "feature_seed": self.graph.feature_seed,
                "aggregate_neighbors": self.graph.aggregate_neighbors,
                "swish_beta": self.graph.swish_beta,
                "projection": self.graph.projection,
                "projection_bias": self.graph.projection_bias,
            },
            "solver": {
                "mode": self.solver.mode,
                "cg_mode": self.solver.cg_mode,
                "cg_iters": self.solver.cg_iters,
                "cg_alpha": _jsonable(self.solver.cg_alpha),
                "cg_beta": _jsonable(self.solver.cg_beta),
                "cg_tol": self.solver.cg_tol,
                "exact_cap": self.solver.exact_cap,
            },
            "layers": {
                "blocks": lay.blocks,
                "layers": lay.layers,
                **{
                    name: _jsonable(getattr(lay, name))
                    for name in ("mu_u", "mu_d2", "mu_d1", "rho", "rho_u", "rho_d", "residual")
                },
            },
            "heads": {
                "count": self.heads.count,
                "merge": _jsonable(self.heads.merge),
                "metric_scale_u": _jsonable(self.heads.metric_scale_u),
                "metric_scale_d": _jsonable(self.heads.metric_scale_d),
                "metric_overrides": self.heads.metric_overrides,
            },
            "tuner": {
                "iterations": self.tuner.iterations,
                "seed": self.tuner.seed,
                "step": self.tuner.step,
                "perturb": self.tuner.perturb,
                "decay_exponent": self.tuner.decay_exponent,
                "perturb_exponent": self.tuner.perturb_exponent,
                "eval_samples": self.tuner.eval_samples,
            },
            "data": {
                "stride": self.data.stride,
                "ratios": list(self.data.ratios),
                "horizon": self.data.horizon,
                "history": self.data.history,
                "mape_floor": self.data.mape_floor,
                "extrapolation": self.data.extrapolation,
                "trend_window": self.data.trend_window,
                "seasonal_period": self.data.seasonal_period,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {"graph", "solver", "layers", "heads", "tuner", "data"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, klass in (
            ("graph", GraphSettings), ("solver", SolverSettings), ("layers", LayerSettings),
            ("heads", HeadSettings), ("tuner", TunerSettings), ("data", DataSettings),
        ):
            try:
                sections[name] = klass(**doc.get(name, {}))
            except TypeError as exc:
                raise ValueError(f"config section '{name}': {exc}") from None
            except ValueError as exc:
                raise ValueError(f"config section '{name}': {exc}") from None
        return cls(**sections)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


def _jsonable(value):
    if value is None:
        return None
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value

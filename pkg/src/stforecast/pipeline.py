"""End-to-end forecasting: standardize, extrapolate, iterate graph-learning
and ADMM blocks, merge heads, and score.

The running signal is the stacked vector over stations x instants; each block
relearns the mixed graph from the current signal, refines the signal with one
per-head ADMM block, merges the heads, and applies a residual step.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import attention, solver
from .config import PipelineConfig
from .graphs import PhysicalGraph, build_spatial_skeleton, build_temporal_skeleton


@dataclass(eq=False)
class Sample:
    """One forecasting window: observed history plus the target block."""

    observed: np.ndarray  # (N, T+1)
    target: np.ndarray  # (N, S)
    timestamps: np.ndarray  # (T+1+S,) seconds, uniformly spaced

    @property
    def n_stations(self) -> int:
        return self.observed.shape[0]

    def full_truth(self) -> np.ndarray:
        return np.concatenate([self.observed, self.target], axis=1)


@dataclass(eq=False)
class Standardizer:
    """Per-station affine normalization fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # stations whose training series had zero variance

    @classmethod
    def fit(cls, values_tn: np.ndarray) -> "Standardizer":
        mean = values_tn.mean(axis=0)
        std = values_tn.std(axis=0)
        constant = std == 0
        std = np.where(constant, 1.0, std)
        return cls(mean, std, constant)

    @classmethod
    def identity(cls, n_stations: int) -> "Standardizer":
        return cls(np.zeros(n_stations), np.ones(n_stations), np.zeros(n_stations, dtype=bool))

    def transform(self, mat_ns: np.ndarray) -> np.ndarray:
        return (mat_ns - self.mean[:, None]) / self.std[:, None]

    def inverse(self, mat_ns: np.ndarray) -> np.ndarray:
        return mat_ns * self.std[:, None] + self.mean[:, None]


def initial_extrapolation(
    observed: np.ndarray,
    horizon: int,
    method: str = "linear-trend",
    trend_window: int = 6,
    seasonal_period: int = 288,
) -> np.ndarray:
    """First guess for the future block, shape (N, horizon).

    seasonal-naive repeats the value one period back (falling back to
    hold-last while the history is shorter than the period); linear-trend
    fits a least-squares line over the last ``trend_window`` observations.
    """
    n, t_obs = observed.shape
    if method == "hold-last":
        return np.repeat(observed[:, -1:], horizon, axis=1)
    if method == "linear-trend":
        w = min(trend_window, t_obs)
        ts = np.arange(w, dtype=np.float64)
        design = np.vstack([ts, np.ones(w)]).T
        coef, *_ = np.linalg.lstsq(design, observed[:, -w:].T, rcond=None)
        future_t = np.arange(w, w + horizon, dtype=np.float64)
        return (coef[0][:, None] * future_t[None, :]) + coef[1][:, None]
    if method == "seasonal-naive":
        series = observed.copy()
        for h in range(horizon):
            idx = series.shape[1] - seasonal_period
            col = series[:, idx] if idx >= 0 else series[:, -1]
            series = np.concatenate([series, col[:, None]], axis=1)
        return series[:, t_obs:]
    raise ValueError(f"unknown extrapolation method {method!r}")


def flatten_time_major(mat_ns: np.ndarray) -> np.ndarray:
    """(N, T) station-major matrix -> flat vector with time-major blocks."""
    return mat_ns.T.reshape(-1)


def unflatten_time_major(x: np.ndarray, n_stations: int) -> np.ndarray:
    return x.reshape(-1, n_stations).T


@dataclass(eq=False)
class PipelineContext:
    """Shared immutable pieces reused across samples."""

    pg: PhysicalGraph
    config: PipelineConfig
    bank: attention.MetricBank
    standardizer: Standardizer
    sskel: object
    tskel: object
    eigmap: np.ndarray
    feature_map: attention.FeatureMap
    interval: float

    @classmethod
    def build(
        cls,
        pg: PhysicalGraph,
        config: PipelineConfig,
        bank: attention.MetricBank | None = None,
        standardizer: Standardizer | None = None,
        interval: float = 300.0,
    ) -> "PipelineContext":
        g = config.graph
        sskel = build_spatial_skeleton(pg, g.k)
        tskel = build_temporal_skeleton(pg.n_stations, config.data.n_instants, g.window)
        eigmap = attention.spatial_eigenmap(pg, g.spatial_dim)
        if bank is None:
            bank = config.heads.build_bank(config.data.n_instants, g.window, g.feature_dim)
        if standardizer is None:
            standardizer = Standardizer.identity(pg.n_stations)
        embed_dim = 1 + g.spatial_dim + attention.TEMPORAL_DIM
        if g.projection is not None:
            feature_map = attention.FeatureMap(
                np.asarray(g.projection, dtype=float),
                bias=None if g.projection_bias is None else np.asarray(g.projection_bias),
                aggregate_neighbors=g.aggregate_neighbors,
                swish_beta=g.swish_beta,
            )
        else:
            feature_map = attention.FeatureMap.default(
                embed_dim,
                g.feature_dim,
                seed=g.feature_seed,
                aggregate_neighbors=g.aggregate_neighbors,
                swish_beta=g.swish_beta,
            )
        return cls(pg, config, bank, standardizer, sskel, tskel, eigmap, feature_map, interval)


def _forward(sample: Sample, ctx: PipelineContext) -> np.ndarray:
    """Full reconstruction in raw units, shape (N, T+1+S)."""
    cfg = ctx.config
    n = sample.n_stations
    t_obs = sample.observed.shape[1]
    horizon = sample.target.shape[1]
    if t_obs != cfg.data.history or horizon != cfg.data.horizon:
        raise ValueError("sample window does not match the configured history/horizon")

    obs_std = ctx.standardizer.transform(sample.observed)
    extrap = initial_extrapolation(
        obs_std,
        horizon,
        method=cfg.data.extrapolation,
        trend_window=cfg.data.trend_window,
        seasonal_period=cfg.data.seasonal_period,
    )
    x = flatten_time_major(np.concatenate([obs_std, extrap], axis=1))
    y = x[: n * t_obs].copy()
    t_steps = np.asarray(sample.timestamps, dtype=np.float64) / ctx.interval

    sched = cfg.solver.schedule()
    mode = cfg.solver.mode
    rho0 = cfg.default_rho(n)
    merge = ctx.config.heads.merge
    needs_ln = mode == "undirected_temporal"
    for b in range(cfg.layers.blocks):
        embeddings = attention.embed(x, ctx.pg, t_steps, ctx.eigmap)
        feats = ctx.feature_map(embeddings, ctx.sskel)
        graphs_h = attention.multi_head_graphs(
            feats, ctx.sskel, ctx.tskel, ctx.bank, n_observed=t_obs,
            with_undirected_temporal=needs_ln,
        )
        params = cfg.layers.layer_params(b, rho0)
        outs = []
        for h, graph in enumerate(graphs_h):
            try:
                outs.append(solver.admm_block(x, y, graph, params, sched, mode))
            except solver.NumericFailure as exc:
                raise solver.NumericFailure(
                    f"block {b}, head {h}: {exc}", layer=exc.layer, step=exc.step
                ) from None
        x_new = sum(w * out for w, out in zip(merge, outs))
        x = cfg.layers.residual[b] * x_new + (1.0 - cfg.layers.residual[b]) * x

    return ctx.standardizer.inverse(unflatten_time_major(x, n))


def run_forecast(sample: Sample, ctx: PipelineContext) -> np.ndarray:
    """Predicted future block in raw units, shape (N, S)."""
    recon = _forward(sample, ctx)
    return recon[:, sample.observed.shape[1] :]


def reconstruct(sample: Sample, ctx: PipelineContext) -> np.ndarray:
    """Full reconstructed sequence (observed span included), raw units."""
    return _forward(sample, ctx)


def persistence_forecast(sample: Sample) -> np.ndarray:
    """Hold-last baseline."""
    return np.repeat(sample.observed[:, -1:], sample.target.shape[1], axis=1)


def forecast_metrics(pred: np.ndarray, target: np.ndarray, mape_floor: float = 1.0):
    """(rmse, mae, mape_percent); MAPE skips targets at or below the floor."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    if pred.size == 0:
        raise ValueError("empty input")
    err = pred - target
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    keep = np.abs(target) > mape_floor
    mape = float(100.0 * np.mean(np.abs(err[keep]) / np.abs(target[keep]))) if keep.any() else float("nan")
    return rmse, mae, mape


def huber_loss(pred: np.ndarray, target: np.ndarray, delta: float = 1.0) -> float:
    err = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    quad = 0.5 * err**2
    lin = delta * (err - 0.5 * delta)
    return float(np.mean(np.where(err <= delta, quad, lin)))


def evaluate(
    samples: list[Sample],
    ctx: PipelineContext,
    max_samples: int | None = None,
    workers: int = 1,
) -> dict:
    """Forecast a batch and aggregate metrics (plus the persistence baseline)."""
    if not samples:
        raise ValueError("no samples to evaluate")
    chosen = evenly_spaced_subset(samples, max_samples)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            recons = list(pool.map(lambda s: _forward(s, ctx), chosen))
    else:
        recons = [_forward(s, ctx) for s in chosen]
    preds, targets, base = [], [], []
    hubers = []
    for s, recon in zip(chosen, recons):
        t_obs = s.observed.shape[1]
        preds.append(recon[:, t_obs:])
        targets.append(s.target)
        base.append(persistence_forecast(s))
        hubers.append(huber_loss(recon, s.full_truth()))
    pred = np.concatenate(preds, axis=1)
    target = np.concatenate(targets, axis=1)
    floor = ctx.config.data.mape_floor
    rmse, mae, mape = forecast_metrics(pred, target, floor)
    p_rmse, p_mae, p_mape = forecast_metrics(np.concatenate(base, axis=1), target, floor)
    return {
        "n_samples": len(chosen),
        "rmse": rmse,
        "mae": mae,
        "mape": mape,
        "huber": float(np.mean(hubers)),
        "persistence_rmse": p_rmse,
        "persistence_mae": p_mae,
        "persistence_mape": p_mape,
        "predictions": preds,
    }


def evenly_spaced_subset(samples: list, max_samples: int | None) -> list:
    if max_samples is None or max_samples >= len(samples):
        return list(samples)
    idx = np.linspace(0, len(samples) - 1, max_samples).round().astype(int)
    return [samples[i] for i in np.unique(idx)]


def perron_centrality(
    w_slice, tol: float = 1e-10, max_iter: int = 100000
) -> np.ndarray:
    """Dominant eigenvector of a nonnegative connected slice, 1-norm normalized.

    Power iteration on the diagonally shifted matrix (the shift breaks the
    +/- eigenvalue tie of bipartite slices without changing eigenvectors).
    """
    w = w_slice.toarray() if sp.issparse(w_slice) else np.asarray(w_slice, dtype=np.float64)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValueError("expected a square matrix")
    if np.any(w < 0):
        raise ValueError("matrix must be nonnegative")
    if not _connected(w):
        raise ValueError("slice is not connected")
    if n == 1:
        return np.ones(1)
    shift = w.sum(axis=1).max()
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = w @ v + shift * v
        nxt /= np.abs(nxt).sum()
        if np.abs(nxt - v).sum() <= tol:
            v = nxt
            break
        v = nxt
    else:
        applied = w @ v + shift * v
        lam = float(v @ applied) / float(v @ v)
        resid = float(np.abs(applied - lam * v).sum())
        raise RuntimeError(f"power iteration did not converge (residual {resid:.3e})")
    if np.any(v <= 0):
        raise RuntimeError("Perron vector has non-positive entries")
    return v


def _connected(w: np.ndarray) -> bool:
    n = w.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    adj = w > 0
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i] | adj[:, i]):
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return bool(seen.all())

"""Self-check suite: invariants and oracle agreements, printable as a table.

Each check returns a CheckResult; the CLI ``verify`` subcommand runs them all
and exits nonzero if any fails. The pytest suite covers the same ground (and
more) with assertions; this module exists so a deployed build can be probed
without a test harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracles, priors, solver
from .attention import MetricBank, directed_weights, undirected_weights
from .graphs import (
    MixedGraph,
    PhysicalGraph,
    assemble_random_walk_digraph,
    build_spatial_skeleton,
    build_temporal_skeleton,
    directed_skeleton_from_edges,
    symmetrized_dglr_matrix,
)
from .priors import PriorWeights
from .solver import CgSchedule, LayerParams, admm_block, cg_solve


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def line_digraph(n: int):
    """Directed line over n nodes, unit weights, unit self-loop at the source."""
    skel = directed_skeleton_from_edges(n, [(i, i + 1) for i in range(n - 1)])
    return assemble_random_walk_digraph(skel, np.ones(n - 1))


def path_laplacian(n: int) -> np.ndarray:
    lap = np.zeros((n, n))
    for i in range(n - 1):
        lap[i, i] += 1
        lap[i + 1, i + 1] += 1
        lap[i, i + 1] -= 1
        lap[i + 1, i] -= 1
    return lap


def random_mixed_graph(
    rng: np.random.Generator,
    n_stations: int = 3,
    n_instants: int = 4,
    window: int = 2,
    n_observed: int = 2,
    k: int = 2,
) -> MixedGraph:
    """Small random instance with positive attention-style weights."""
    pos = rng.uniform(size=(n_stations, 2))
    edges = tuple(
        (i, j, float(np.hypot(*(pos[i] - pos[j]))))
        for i in range(n_stations)
        for j in range(i + 1, n_stations)
    )
    pg = PhysicalGraph(n_stations, edges)
    sskel = build_spatial_skeleton(pg, min(k, n_stations - 1))
    tskel = build_temporal_skeleton(n_stations, n_instants, window)
    feats = rng.standard_normal((n_stations * n_instants, 4))
    bank = MetricBank.default(n_instants, window, feature_dim=4, heads=1)
    wu = undirected_weights(feats, sskel, bank.undirected[0])
    wd = directed_weights(feats, tskel, bank.directed[0])
    from .attention import build_mixed_graph

    return build_mixed_graph(wu, wd, sskel, tskel, n_observed)


def check_line_graph_symmetrization() -> CheckResult:
    """Symmetrized DAG operator of a directed line == undirected path Laplacian."""
    worst = 0.0
    for n in range(2, 33):
        _, l_rd = line_digraph(n)
        call = symmetrized_dglr_matrix(l_rd).toarray()
        worst = max(worst, float(np.abs(call - path_laplacian(n)).max()))
    return CheckResult(
        "line-digraph symmetrization equals path Laplacian (N=2..32)",
        worst == 0.0,
        f"max entrywise deviation {worst:.1e}",
    )


def check_four_node_line_matrices() -> CheckResult:
    """Golden 4-node directed-line operators, entrywise."""
    w_rd, l_rd = line_digraph(4)
    w_gold = np.array([[1, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=float)
    l_gold = np.eye(4) - w_gold
    call_gold = np.array(
        [[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], dtype=float
    )
    dev = max(
        float(np.abs(w_rd.toarray() - w_gold).max()),
        float(np.abs(l_rd.toarray() - l_gold).max()),
        float(np.abs(symmetrized_dglr_matrix(l_rd).toarray() - call_gold).max()),
    )
    return CheckResult("4-node line golden matrices", dev == 0.0, f"max deviation {dev:.1e}")


def check_directionality() -> CheckResult:
    """The l2 temporal prior respects edge direction on a 3-node DAG."""
    x = np.array([2.0, 0.0, 1.0])
    skel_fwd = directed_skeleton_from_edges(3, [(0, 2), (1, 2)])
    _, l_fwd = assemble_random_walk_digraph(skel_fwd, np.ones(2))
    skel_rev = directed_skeleton_from_edges(3, [(2, 0), (2, 1)])
    _, l_rev = assemble_random_walk_digraph(skel_rev, np.ones(2))
    fwd = priors.dglr(x, l_fwd)
    rev = priors.dglr(x, l_rev)
    ok = abs(fwd) < 1e-15 and abs(rev - 2.0) < 1e-12
    return CheckResult(
        "directionality: parents-average vs reversed DAG",
        ok,
        f"forward {fwd:.2e} (want 0), reversed {rev:.6f} (want 2)",
    )


def check_soft_threshold(n_cases: int = 1000, seed: int = 11) -> CheckResult:
    """Closed-form shrink matches scalar grid search."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        # draws keep the optimum strictly inside the [-5, 5] grid
        shift = rng.uniform(-1.5, 1.5)
        gamma = rng.uniform(-1.5, 1.5)
        mu = rng.uniform(0, 2)
        rho = rng.uniform(0.5, 3)
        delta = shift - gamma / rho
        closed = np.sign(delta) * max(abs(delta) - mu / rho, 0.0)
        grid = oracles.soft_threshold_grid(shift, gamma, mu, rho, step=1e-3)
        worst = max(worst, abs(closed - grid))
    return CheckResult(
        f"soft-threshold vs grid argmin ({n_cases} cases)",
        worst <= 1e-3 + 1e-9,
        f"max |closed - grid| = {worst:.2e}",
    )


def check_cg_against_dense(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (20, 80, 200):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        a = q @ np.diag(rng.uniform(1.0, 10.0, n)) @ q.T
        b = rng.standard_normal(n)
        x = cg_solve(lambda v: a @ v, b, np.zeros(n), CgSchedule.exact(tol=1e-10))
        worst = max(worst, float(np.abs(x - oracles.dense_solve(a, b)).max()))
    return CheckResult(
        "exact CG vs dense elimination (n<=200)", worst < 1e-8, f"max deviation {worst:.1e}"
    )


def check_spectral_filters(seed: int = 5) -> CheckResult:
    """z-updates equal their eigendecomposition low-pass forms."""
    rng = np.random.default_rng(seed)
    graph = random_mixed_graph(rng, n_stations=4, n_instants=5, window=2, n_observed=3)
    n = graph.n_nodes
    p = LayerParams(mu_u=1.3, mu_d2=0.7, mu_d1=0.5, rho=1.0, rho_u=0.9, rho_d=1.1)
    state = solver.AdmmState.initial(rng.standard_normal(n), graph)
    state.gamma_u = rng.standard_normal(n)
    state.gamma_d = rng.standard_normal(n)
    sched = CgSchedule.exact(tol=1e-13)
    zu = solver.update_zu(state, graph, p, sched)
    zu_oracle = oracles.spectral_lowpass(
        graph.l_u, 2.0 * p.mu_u / p.rho_u, state.gamma_u / p.rho_u + state.x
    )
    zd = solver.update_zd(state, graph, p, sched)
    zd_oracle = oracles.spectral_lowpass(
        graph.call_rd, 2.0 * p.mu_d2 / p.rho_d, state.gamma_d / p.rho_d + state.x
    )
    dev = max(float(np.abs(zu - zu_oracle).max()), float(np.abs(zd - zd_oracle).max()))
    return CheckResult("z-updates match spectral low-pass forms", dev < 1e-8, f"max dev {dev:.1e}")


def check_smooth_fixed_point(n_instances: int = 5, seed: int = 9) -> CheckResult:
    """ADMM with exact CG reaches the dense minimizer of the smooth objective."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        graph = random_mixed_graph(rng, n_stations=3, n_instants=4, window=2, n_observed=2)
        y = rng.standard_normal(int(graph.h_mask.sum()))
        w = PriorWeights(mu_u=0.8, mu_d2=0.6, mu_d1=0.0)
        params = [
            LayerParams(w.mu_u, w.mu_d2, 0.0, rho=1.0, rho_u=1.0, rho_d=1.0)
        ] * 200
        x = admm_block(
            graph.lift_observed(y), y, graph, params, CgSchedule.exact(tol=1e-12)
        )
        gap = priors.objective(x, y, graph, w) - priors.objective(
            oracles.smooth_minimizer(graph, y, w), y, graph, w
        )
        worst = max(worst, abs(gap))
    return CheckResult(
        f"smooth-case ADMM objective vs dense oracle ({n_instances} instances)",
        worst < 1e-6,
        f"max objective gap {worst:.1e}",
    )


def check_graph_invariants(seed: int = 13, n_graphs: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    msgs = []
    ok = True
    for _ in range(n_graphs):
        g = random_mixed_graph(
            rng,
            n_stations=int(rng.integers(2, 5)),
            n_instants=int(rng.integers(3, 6)),
            window=2,
            n_observed=2,
        )
        row_sums = np.asarray(g.w_rd.sum(axis=1)).ravel()
        if np.abs(row_sums - 1.0).max() > 1e-12:
            ok, msgs = False, msgs + ["row sums"]
        for mat in (g.l_u, g.call_rd):
            if (mat - mat.T).count_nonzero() != 0:
                ok, msgs = False, msgs + ["symmetry"]
            if np.linalg.eigvalsh(mat.toarray())[0] < -1e-10:
                ok, msgs = False, msgs + ["PSD"]
        one = np.ones(g.n_nodes)
        if np.abs(g.apply("l_u", one)).max() > 1e-12:
            ok, msgs = False, msgs + ["L_u constant"]
        if np.abs(g.apply("call_rd", one)).max() > 1e-12:
            ok, msgs = False, msgs + ["temporal constant"]
    return CheckResult(
        f"graph invariants on {n_graphs} random builds",
        ok,
        "all hold" if ok else "violated: " + ", ".join(sorted(set(msgs))),
    )


ALL_CHECKS = (
    check_line_graph_symmetrization,
    check_four_node_line_matrices,
    check_directionality,
    check_soft_threshold,
    check_cg_against_dense,
    check_spectral_filters,
    check_smooth_fixed_point,
    check_graph_invariants,
)


def run_all() -> list[CheckResult]:
    return [fn() for fn in ALL_CHECKS]

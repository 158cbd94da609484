"""Consensus engines executed on a deterministic superstep simulator.

Both engines follow the same synchronous (Jacobi) schedule: within a
superstep every node first transmits its previous iterate to its
neighbors, then updates its dual aggregate from the received values, then
solves its local problem.  Nodes are processed in id order and neighbor
sums accumulate in sorted order, so a run is a pure function of its
inputs no matter how many workers execute it.

The gradient-ascent engine is generic over the local solver; it drives
the robust subspace solve, the squared-loss (PCA) solve, and the
vector-valued geometric-median solve with the same dual update.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DrsrError,
    EngineError,
    IterateNotPositiveDefiniteError,
    ProtocolError,
)
from .graph import NetworkGraph
from .local_solvers import GmsParams, LocalDataset, _row_norms, cadmm_local_solve
from .matops import spectral_decompose

logger = logging.getLogger("drsr.consensus")

#: Maximum number of automatic step-size halvings after positive
#: definiteness failures before giving up.
MAX_STEP_HALVINGS = 5

_TRACE_TOL = 1e-9


@dataclass
class NodeState:
    """Per-node iterate and dual aggregate."""

    q: np.ndarray
    dual: np.ndarray
    node_id: int


@dataclass(frozen=True)
class ConsensusConfig:
    """Outer-loop configuration shared by both engines.

    compression, when set to an integer d, transmits only the top d
    eigenvectors of each iterate (receivers see the normalized rank-d
    reconstruction).  It is experimental and off by default.
    track_edge_duals maintains the per-edge multipliers alongside the
    aggregated duals and cross-checks them every superstep.
    """

    step_size: float
    t_outer: int = 250
    compression: int | None = None
    record_every: int = 10
    track_edge_duals: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigurationError(f"step_size must be positive, got {self.step_size}")
        if self.t_outer < 1:
            raise ConfigurationError(f"t_outer must be >= 1, got {self.t_outer}")
        if self.record_every < 1:
            raise ConfigurationError(f"record_every must be >= 1, got {self.record_every}")
        if self.track_edge_duals and self.compression is not None:
            raise ConfigurationError(
                "edge-dual tracking assumes exact transmission; disable compression")


@dataclass
class ConsensusRun:
    """Result of one engine run: final states plus diagnostics."""

    states: list[NodeState]
    records: list[dict]
    step_size: float
    halvings: int = 0


@dataclass(frozen=True)
class CompressedState:
    """Top eigenvectors of an iterate, stored as orthonormal rows."""

    basis_rows: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis_rows.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.basis_rows.shape[1]


def compress_state(q: np.ndarray, d: int) -> CompressedState:
    """Keep only the top ``d`` eigenvectors of a symmetric iterate."""
    dim = q.shape[0]
    if not 1 <= d < dim:
        raise ConfigurationError(f"compression rank must satisfy 1 <= d < {dim}, got {d}")
    decomp = spectral_decompose(q)
    top = decomp.eigenvectors[:, dim - d:]
    return CompressedState(basis_rows=np.ascontiguousarray(top.T[::-1]))


def decompress(compressed: CompressedState) -> np.ndarray:
    """Reconstruct ``U^T U / tr(U^T U)``: symmetric, trace one, rank d."""
    u = compressed.basis_rows
    gram = u.T @ u
    return gram / float(np.trace(gram))


def practical_step_size(datasets: Sequence[LocalDataset], graph: NetworkGraph,
                        n: int = 1, delta: float = 1e-10,
                        mode: str = "practical") -> float:
    """Step size from the norm-weighted scatter of every block.

    The conservative value is ``1 / (n * max_k |E_k| * tr(S_k^-1))`` with
    ``S_k = sum_x x x^T / max(||x||, delta)``; the practical value relaxes
    it by ``D^2``.  ``n`` is the number of supersteps the conservative
    guarantee is asked to cover.
    """
    if mode not in ("conservative", "practical"):
        raise ConfigurationError(f"unknown step-size mode {mode!r}")
    if graph.edge_count == 0:
        raise ConfigurationError("step size is undefined on a graph with no edges")
    if len(datasets) != graph.node_count:
        raise ConfigurationError(
            f"got {len(datasets)} datasets for {graph.node_count} nodes")
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    worst = 0.0
    for k, data in enumerate(datasets, start=1):
        if not data.full_rank:
            raise ConfigurationError(f"dataset at node {k} is rank deficient")
        points = data.points
        norms = np.maximum(_row_norms(points), delta)
        scatter = (points / norms[:, None]).T @ points
        trace_inv = float(np.trace(np.linalg.inv(scatter)))
        worst = max(worst, len(graph.incident_edges[k]) * trace_inv)
    mu = 1.0 / (n * worst)
    if mode == "practical":
        mu *= float(datasets[0].dim) ** 2
    return mu


def cbga_update_dual(state: NodeState, neighbor_qs: Mapping[int, np.ndarray],
                     mu: float, neighbors: Sequence[int]) -> np.ndarray:
    """Dual ascent update ``A_k += mu * sum_q (Q_k - Q_q)``.

    Raises ProtocolError when a neighbor's message is missing or an
    unexpected one is present.
    """
    expected = set(neighbors)
    got = set(neighbor_qs)
    if expected != got:
        missing = sorted(expected - got)
        surplus = sorted(got - expected)
        raise ProtocolError(
            f"node {state.node_id}: neighbor messages mismatch "
            f"(missing {missing}, unexpected {surplus})")
    dual = state.dual.copy()
    for q_id in sorted(neighbors):
        dual += mu * (state.q - neighbor_qs[q_id])
    return dual


def _check_state_invariants(state: NodeState, superstep: int) -> None:
    if state.q.ndim != 2:
        return
    trace_q = float(np.trace(state.q))
    if abs(trace_q - 1.0) > _TRACE_TOL:
        raise EngineError(f"iterate trace drifted to {trace_q!r}",
                          node_id=state.node_id, superstep=superstep)
    trace_dual = float(np.trace(state.dual))
    if abs(trace_dual) > _TRACE_TOL * (1.0 + float(np.abs(state.dual).max())):
        raise EngineError(f"dual trace drifted to {trace_dual!r}",
                          node_id=state.node_id, superstep=superstep)


def _disagreement(states: list[NodeState], graph: NetworkGraph, k: int) -> float:
    own = states[k - 1].q
    worst = 0.0
    for q_id in graph.neighbors[k]:
        worst = max(worst, float(np.linalg.norm(own - states[q_id - 1].q)))
    return worst


def _record(records: list[dict], algo: str, s: int, states: list[NodeState],
            graph: NetworkGraph, datasets, objective_fn, error_fn) -> None:
    for k in range(1, graph.node_count + 1):
        state = states[k - 1]
        records.append({
            "algo": algo,
            "s": s,
            "k": k,
            "recovery_error": None if error_fn is None else error_fn(k, state.q),
            "local_objective": None if objective_fn is None else objective_fn(
                k, datasets[k - 1], state.q, state.dual),
            "disagreement": _disagreement(states, graph, k),
        })


def write_diagnostics(records: Sequence[dict], path) -> None:
    """Serialize diagnostic records as JSON lines."""
    with open(path, "w") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def _transmitted_views(states: list[NodeState], compression: int | None) -> list[np.ndarray]:
    if compression is None:
        return [state.q for state in states]
    return [decompress(compress_state(state.q, compression)) for state in states]


LocalSolver = Callable[[int, LocalDataset, np.ndarray, np.ndarray | None], np.ndarray]


def _validate_run_inputs(datasets, graph: NetworkGraph) -> None:
    if len(datasets) != graph.node_count:
        raise ConfigurationError(
            f"got {len(datasets)} datasets for {graph.node_count} nodes")


def _solve_node(solver: LocalSolver, k: int, dataset, dual, prev, superstep: int):
    try:
        return solver(k, dataset, dual, prev)
    except IterateNotPositiveDefiniteError:
        raise
    except DrsrError as exc:
        raise EngineError(f"local solve failed at node {k}, superstep {superstep}: {exc}",
                          node_id=k, superstep=superstep) from exc


def _with_step_safety(run_once, step_size: float) -> ConsensusRun:
    mu = float(step_size)
    for halvings in range(MAX_STEP_HALVINGS + 1):
        try:
            result = run_once(mu)
            result.halvings = halvings
            return result
        except IterateNotPositiveDefiniteError as exc:
            if halvings == MAX_STEP_HALVINGS:
                raise EngineError(
                    f"run still unstable after {MAX_STEP_HALVINGS} step halvings "
                    f"(last step size {mu})") from exc
            mu *= 0.5
            logger.warning("positive definiteness lost; halving step size to %g", mu)
    raise AssertionError("unreachable")


def cbga_run(local_solver: LocalSolver, datasets: Sequence[LocalDataset],
             graph: NetworkGraph, cfg: ConsensusConfig,
             params: GmsParams | None = None, *,
             objective_fn=None, error_fn=None, algo: str = "cbga") -> ConsensusRun:
    """Run the consensus gradient-ascent loop.

    ``local_solver(k, dataset, dual, previous_state)`` returns the node's
    new iterate; ``previous_state`` is None unless warm starts are enabled
    in ``params``.  On a positive definiteness failure the whole run is
    restarted with half the step size, at most MAX_STEP_HALVINGS times.
    Optional callbacks attach a recovery error and the local objective to
    each diagnostic record.
    """
    _validate_run_inputs(datasets, graph)
    params = params or GmsParams()

    def run_once(mu: float) -> ConsensusRun:
        k_count = graph.node_count
        states = []
        for k in range(1, k_count + 1):
            q0 = _solve_node(local_solver, k, datasets[k - 1], None, None, 0)
            states.append(NodeState(q=q0, dual=np.zeros_like(q0), node_id=k))
        records: list[dict] = []
        _record(records, algo, 0, states, graph, datasets, objective_fn, error_fn)
        if graph.edge_count == 0:
            # No consensus constraints: the duals stay zero and every further
            # solve would reproduce the initial one, so stop after it.
            _record(records, algo, cfg.t_outer, states, graph, datasets,
                    objective_fn, error_fn)
            return ConsensusRun(states=states, records=records, step_size=mu)
        lambdas = {m: np.zeros_like(states[0].q)
                   for m in range(1, graph.edge_count + 1)} if cfg.track_edge_duals else None
        for s in range(1, cfg.t_outer + 1):
            previous = [state.q for state in states]
            seen = _transmitted_views(states, cfg.compression)
            for k in range(1, k_count + 1):
                state = states[k - 1]
                neighbor_qs = {q_id: seen[q_id - 1] for q_id in graph.neighbors[k]}
                state.dual = cbga_update_dual(state, neighbor_qs, mu,
                                              graph.neighbors[k])
            if lambdas is not None:
                _update_and_check_edge_duals(lambdas, previous, seen, states,
                                             graph, mu, s)
            for k in range(1, k_count + 1):
                state = states[k - 1]
                warm = previous[k - 1] if params.warm_start else None
                state.q = _solve_node(local_solver, k, datasets[k - 1],
                                      state.dual, warm, s)
                _check_state_invariants(state, s)
            if s % cfg.record_every == 0 or s == cfg.t_outer:
                _record(records, algo, s, states, graph, datasets,
                        objective_fn, error_fn)
        return ConsensusRun(states=states, records=records, step_size=mu)

    return _with_step_safety(run_once, cfg.step_size)


def _update_and_check_edge_duals(lambdas, previous, seen, states,
                                 graph: NetworkGraph, mu: float, s: int) -> None:
    """Debug bookkeeping: per-edge multipliers must re-aggregate to the duals."""
    for m, (lo, hi) in enumerate(graph.edges, start=1):
        lambdas[m] = lambdas[m] + mu * (previous[lo - 1] - seen[hi - 1])
    for k in range(1, graph.node_count + 1):
        agg = np.zeros_like(states[0].dual)
        for m in graph.incident_edges[k]:
            lo, hi = graph.edges[m - 1]
            sign = 1.0 if k == lo else -1.0
            agg += sign * lambdas[m]
        dual = states[k - 1].dual
        drift = float(np.linalg.norm(agg - dual))
        if drift > 1e-9 * (1.0 + float(np.linalg.norm(dual))):
            raise ProtocolError(
                f"edge-dual bookkeeping diverged at node {k}, superstep {s} "
                f"(drift {drift:.3e})")


def cadmm_run(datasets: Sequence[LocalDataset], graph: NetworkGraph,
              cfg: ConsensusConfig, params: GmsParams | None = None, *,
              objective_fn=None, error_fn=None, algo: str = "cadmm") -> ConsensusRun:
    """Run the ADMM consensus loop for the robust subspace objective.

    Each superstep first advances every ``Z_k`` by the neighborhood
    disagreement, then performs the ridged proximal local solves.  Shares
    the step-halving safety net with the gradient-ascent engine.
    """
    _validate_run_inputs(datasets, graph)
    params = params or GmsParams()

    def solve_plain(k, dataset, dual, prev):
        dim = dataset.dim
        zero = np.zeros((dim, dim))
        z = zero if dual is None else dual
        return cadmm_local_solve(dataset, z, [], np.eye(dim) / dim, 0.0, params,
                                 initial_q=prev)

    def run_once(rho: float) -> ConsensusRun:
        k_count = graph.node_count
        states = []
        for k in range(1, k_count + 1):
            q0 = _solve_node(solve_plain, k, datasets[k - 1], None, None, 0)
            states.append(NodeState(q=q0, dual=np.zeros_like(q0), node_id=k))
        records: list[dict] = []
        _record(records, algo, 0, states, graph, datasets, objective_fn, error_fn)
        if graph.edge_count == 0:
            _record(records, algo, cfg.t_outer, states, graph, datasets,
                    objective_fn, error_fn)
            return ConsensusRun(states=states, records=records, step_size=rho)
        for s in range(1, cfg.t_outer + 1):
            previous = [state.q for state in states]
            seen = _transmitted_views(states, cfg.compression)
            for k in range(1, k_count + 1):
                state = states[k - 1]
                neighbor_qs = {q_id: seen[q_id - 1] for q_id in graph.neighbors[k]}
                state.dual = cbga_update_dual(state, neighbor_qs, rho,
                                              graph.neighbors[k])
            for k in range(1, k_count + 1):
                state = states[k - 1]
                neighbor_prev = [seen[q_id - 1] for q_id in graph.neighbors[k]]
                warm = previous[k - 1] if params.warm_start else None
                try:
                    state.q = cadmm_local_solve(
                        datasets[k - 1], state.dual, neighbor_prev,
                        previous[k - 1], rho, params, initial_q=warm)
                except IterateNotPositiveDefiniteError:
                    raise
                except DrsrError as exc:
                    raise EngineError(
                        f"local solve failed at node {k}, superstep {s}: {exc}",
                        node_id=k, superstep=s) from exc
                _check_state_invariants(state, s)
            if s % cfg.record_every == 0 or s == cfg.t_outer:
                _record(records, algo, s, states, graph, datasets,
                        objective_fn, error_fn)
        return ConsensusRun(states=states, records=records, step_size=rho)

    return _with_step_safety(run_once, cfg.step_size)

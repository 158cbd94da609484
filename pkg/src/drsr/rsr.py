"""End-to-end decentralized subspace recovery algorithms.

The consensus engines supply per-node trace-one matrices; this module
wires them to the local solvers, extracts subspaces from their spectra,
and adds the exact-aggregation family (covariance flooding) on which the
reweighted Reaper and median-subspace schemes are built.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .consensus import ConsensusConfig, ConsensusRun, cadmm_run, cbga_run
from .data import PartitionedDataset
from .errors import (
    ConfigurationError,
    DegenerateSpectrumWarning,
    PreconditionError,
    ProtocolError,
)
from .graph import NetworkGraph
from .local_solvers import (
    GmsParams,
    LocalDataset,
    _huber_sum,
    _row_norms,
    gms_objective,
    gms_local_solve,
    gmedian_local_solve,
    pca_local_solve,
)
from .matops import spectral_decompose, symmetrize


@dataclass(frozen=True)
class Subspace:
    """A d-dimensional linear subspace of R^D with an orthonormal basis."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2:
            raise PreconditionError(f"basis must be 2-d, got shape {basis.shape}")
        ambient, dim = basis.shape
        if not 1 <= dim <= ambient - 1:
            raise PreconditionError(
                f"subspace dimension must satisfy 1 <= d <= D-1, got d={dim}, D={ambient}")
        gram = basis.T @ basis
        if np.max(np.abs(gram - np.eye(dim))) > 1e-10:
            raise PreconditionError("basis columns are not orthonormal")
        object.__setattr__(self, "basis", np.ascontiguousarray(basis))

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass
class RsrResult:
    """Per-node outputs of one distributed run."""

    per_node_subspaces: list[Subspace]
    per_node_q: list[np.ndarray] | None
    diagnostics: list[dict] = field(default_factory=list)
    algo: str = ""
    step_size: float | None = None
    halvings: int = 0

    def to_json_dict(self) -> dict:
        return {
            "algo": self.algo,
            "step_size": self.step_size,
            "halvings": self.halvings,
            "per_node_bases": [s.basis.tolist() for s in self.per_node_subspaces],
            "diagnostics": list(self.diagnostics),
        }


def extract_subspace(q: np.ndarray, d: int, which: str = "bottom") -> Subspace:
    """Span of the bottom (or top) ``d`` eigenvectors of a symmetric matrix.

    Emits DegenerateSpectrumWarning when the eigengap at the cut is below
    1e-12; the deterministic sign and ordering conventions still make the
    returned basis reproducible.
    """
    if which not in ("bottom", "top"):
        raise ConfigurationError(f"which must be 'bottom' or 'top', got {which!r}")
    decomp = spectral_decompose(q)
    dim = decomp.dim
    if not 1 <= d < dim:
        raise PreconditionError(f"need 1 <= d < D, got d={d}, D={dim}")
    lam = decomp.eigenvalues
    if which == "bottom":
        basis = decomp.eigenvectors[:, :d]
        gap = float(lam[d] - lam[d - 1])
    else:
        basis = decomp.eigenvectors[:, dim - d:][:, ::-1]
        gap = float(lam[dim - d] - lam[dim - d - 1])
    if gap < 1e-12:
        warnings.warn(
            f"eigengap {gap:.3e} at the {which}-{d} cut is numerically degenerate",
            DegenerateSpectrumWarning, stacklevel=2)
    return Subspace(basis=np.ascontiguousarray(basis))


def recovery_error(estimate: Subspace, truth: Subspace) -> float:
    """Frobenius distance between orthoprojectors; 0 iff equal subspaces."""
    if estimate.ambient_dim != truth.ambient_dim or estimate.dim != truth.dim:
        raise PreconditionError(
            f"subspace mismatch: ({estimate.ambient_dim},{estimate.dim}) vs "
            f"({truth.ambient_dim},{truth.dim})")
    return float(np.linalg.norm(estimate.projector() - truth.projector(), "fro"))


def _gms_blocks(data: PartitionedDataset) -> list[LocalDataset]:
    """Blocks for the robust solvers: full rank and at least 2D points.

    The point-count floor is a practical proxy for the strict-convexity
    condition the theory needs; genuinely thin blocks should be reduced in
    dimension first.
    """
    blocks = []
    for k, block in enumerate(data.blocks, start=1):
        if block.shape[0] < 2 * data.ambient_dim:
            raise PreconditionError(
                f"block {k} has {block.shape[0]} points; the robust solve needs "
                f"at least 2D = {2 * data.ambient_dim} per node")
        blocks.append(LocalDataset(block))
    return blocks


def _error_fn_for(truth: Subspace | None, d: int, which: str = "bottom"):
    if truth is None:
        return None

    def error_fn(_k: int, q: np.ndarray) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            return recovery_error(extract_subspace(q, d, which), truth)

    return error_fn


def distributed_gms(data: PartitionedDataset, graph: NetworkGraph, d: int,
                    engine: str = "cbga", cfg: ConsensusConfig | None = None,
                    params: GmsParams | None = None, *,
                    truth: Subspace | None = None) -> RsrResult:
    """Decentralized robust subspace recovery via either consensus engine.

    Runs the chosen engine on the per-node robust dual solves and returns
    the span of the bottom ``d`` eigenvectors of each node's final iterate.
    """
    if cfg is None:
        raise ConfigurationError("a ConsensusConfig with a step size is required")
    params = params or GmsParams()
    blocks = _gms_blocks(data)

    def objective_fn(_k, dataset, q, dual):
        return gms_objective(dataset, q, dual, params.delta)

    error_fn = _error_fn_for(truth, d)
    if engine == "cbga":
        def solver(_k, dataset, dual, prev):
            a = np.zeros((dataset.dim, dataset.dim)) if dual is None else dual
            return gms_local_solve(dataset, a, params, initial_q=prev)

        run = cbga_run(solver, blocks, graph, cfg, params,
                       objective_fn=objective_fn, error_fn=error_fn,
                       algo="gms-cbga")
    elif engine == "cadmm":
        run = cadmm_run(blocks, graph, cfg, params, objective_fn=objective_fn,
                        error_fn=error_fn, algo="gms-cadmm")
    else:
        raise ConfigurationError(f"unknown engine {engine!r}; expected 'cbga' or 'cadmm'")
    return _result_from_run(run, d, "bottom", f"gms-{engine}")


def _result_from_run(run: ConsensusRun, d: int, which: str, algo: str) -> RsrResult:
    subspaces = [extract_subspace(state.q, d, which) for state in run.states]
    return RsrResult(per_node_subspaces=subspaces,
                     per_node_q=[state.q for state in run.states],
                     diagnostics=run.records, algo=algo,
                     step_size=run.step_size, halvings=run.halvings)


def _flood_sums(graph: NetworkGraph, locals_: list[np.ndarray]
                ) -> tuple[np.ndarray, int]:
    """Flood per-node matrices with origin ids; every node ends up with the
    deduplicated total.  Returns the pooled sum and the supersteps used."""
    known = [{k: locals_[k - 1]} for k in range(1, graph.node_count + 1)]
    supersteps = 0
    while any(len(entry) < graph.node_count for entry in known):
        progress = False
        snapshots = [dict(entry) for entry in known]
        for k in range(1, graph.node_count + 1):
            for q_id in graph.neighbors[k]:
                for origin, mat in snapshots[q_id - 1].items():
                    if origin not in known[k - 1]:
                        known[k - 1][origin] = mat
                        progress = True
        supersteps += 1
        if not progress:
            raise ProtocolError("covariance flooding stalled; graph is not connected")
    pooled = sum(known[0][origin] for origin in sorted(known[0]))
    return symmetrize(pooled), supersteps


def _second_moments(data: PartitionedDataset) -> list[np.ndarray]:
    return [symmetrize(block.T @ block) for block in data.blocks]


def distributed_pca_exact(data: PartitionedDataset, graph: NetworkGraph,
                          d: int) -> RsrResult:
    """Exact decentralized PCA: flood the local second-moment matrices,
    take the top ``d`` eigenvectors of the recovered total at every node."""
    for k, block in enumerate(data.blocks, start=1):
        if block.shape[0] == 0:
            raise PreconditionError(f"block {k} is empty")
    pooled, supersteps = _flood_sums(graph, _second_moments(data))
    subspace = extract_subspace(pooled, d, "top")
    n_nodes = graph.node_count
    records = [{"algo": "pca-exact", "s": supersteps, "k": k,
                "recovery_error": None, "local_objective": None,
                "disagreement": 0.0} for k in range(1, n_nodes + 1)]
    return RsrResult(per_node_subspaces=[subspace] * n_nodes,
                     per_node_q=[pooled.copy() for _ in range(n_nodes)],
                     diagnostics=records, algo="pca-exact", step_size=None)


def distributed_pca_cbga(data: PartitionedDataset, graph: NetworkGraph, d: int,
                         cfg: ConsensusConfig, *,
                         truth: Subspace | None = None) -> RsrResult:
    """Consensus PCA: every node repeatedly solves the squared-loss dual."""
    blocks = [LocalDataset(block) for block in data.blocks]

    def solver(_k, dataset, dual, _prev):
        a = np.zeros((dataset.dim, dataset.dim)) if dual is None else dual
        return pca_local_solve(dataset, a)

    def objective_fn(_k, dataset, q, dual):
        y = dataset.points @ q
        return float(np.einsum("ij,ij->", y, y)) + float(np.sum(q * dual))

    run = cbga_run(solver, blocks, graph, cfg, objective_fn=objective_fn,
                   error_fn=_error_fn_for(truth, d), algo="pca-cbga")
    return _result_from_run(run, d, "bottom", "pca-cbga")


def _trace_d_spectrum(eigenvalues: np.ndarray, d: int) -> np.ndarray:
    """Eigenvalues of the constrained least-squares projector surrogate.

    Clamps ``1 - theta / (2 lam)`` into [0, 1] and bisects the shift
    ``theta`` until the trace equals ``d``.
    """
    lam = np.maximum(eigenvalues, 1e-300)
    lo, hi = 0.0, 2.0 * float(lam[-1])
    while np.clip(1.0 - hi / (2.0 * lam), 0.0, 1.0).sum() > d:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(1.0 - mid / (2.0 * lam), 0.0, 1.0).sum() > d:
            lo = mid
        else:
            hi = mid
    return np.clip(1.0 - 0.5 * (lo + hi) / (2.0 * lam), 0.0, 1.0)


def distributed_reaper(data: PartitionedDataset, graph: NetworkGraph, d: int,
                       delta: float = 1e-10, t_irls: int = 60, *,
                       truth: Subspace | None = None) -> RsrResult:
    """Decentralized least-unsquared-residual projector fit.

    Reweighted scheme: unit weights, then at every iteration the weighted
    second moments are flooded, the trace-d positive semidefinite
    surrogate is read off the pooled spectrum, and each point's weight
    becomes the reciprocal of its residual to the new projector.
    """
    if not delta > 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    blocks = [LocalDataset(block) for block in data.blocks]
    dim = data.ambient_dim
    if not 1 <= d < dim:
        raise PreconditionError(f"need 1 <= d < D, got d={d}, D={dim}")
    betas = [np.ones(block.size) for block in blocks]
    records: list[dict] = []
    projector = None
    for s in range(1, t_irls + 1):
        weighted = [symmetrize((block.points * beta[:, None]).T @ block.points)
                    for block, beta in zip(blocks, betas)]
        pooled, _ = _flood_sums(graph, weighted)
        decomp = spectral_decompose(pooled)
        nu = _trace_d_spectrum(decomp.eigenvalues, d)
        projector = symmetrize((decomp.eigenvectors * nu) @ decomp.eigenvectors.T)
        betas = [1.0 / np.maximum(delta, _row_norms(block.points - block.points @ projector))
                 for block in blocks]
        _append_exact_records(records, "reaper", s, graph, projector, d, "top", truth)
    subspace = extract_subspace(projector, d, "top")
    n_nodes = graph.node_count
    return RsrResult(per_node_subspaces=[subspace] * n_nodes,
                     per_node_q=[projector.copy() for _ in range(n_nodes)],
                     diagnostics=records, algo="reaper", step_size=None)


def _append_exact_records(records, algo, s, graph, matrix, d, which, truth):
    err = None
    if truth is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            err = recovery_error(extract_subspace(matrix, d, which), truth)
    for k in range(1, graph.node_count + 1):
        records.append({"algo": algo, "s": s, "k": k, "recovery_error": err,
                        "local_objective": None, "disagreement": 0.0})


def distributed_fms(data: PartitionedDataset, graph: NetworkGraph, d: int,
                    delta: float = 1e-10, t_irls: int = 60, *,
                    truth: Subspace | None = None) -> RsrResult:
    """Decentralized median-subspace heuristic.

    Starts from the exact decentralized PCA subspace; each iteration
    scales every point by the reciprocal square root of its distance to
    the previous subspace and takes the top ``d`` eigenvectors of the
    flooded weighted second moment.
    """
    if not delta > 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    blocks = [LocalDataset(block) for block in data.blocks]
    dim = data.ambient_dim
    if not 1 <= d < dim:
        raise PreconditionError(f"need 1 <= d < D, got d={d}, D={dim}")
    pooled, _ = _flood_sums(graph, _second_moments(data))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        basis = extract_subspace(pooled, d, "top").basis
    records: list[dict] = []
    for s in range(1, t_irls + 1):
        weighted = []
        for block in blocks:
            residual = block.points - (block.points @ basis) @ basis.T
            w = 1.0 / np.maximum(_row_norms(residual), delta)
            weighted.append(symmetrize((block.points * w[:, None]).T @ block.points))
        pooled, _ = _flood_sums(graph, weighted)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            basis = extract_subspace(pooled, d, "top").basis
        _append_exact_records(records, "fms", s, graph, pooled, d, "top", truth)
    subspace = Subspace(basis=basis)
    n_nodes = graph.node_count
    return RsrResult(per_node_subspaces=[subspace] * n_nodes,
                     per_node_q=[pooled.copy() for _ in range(n_nodes)],
                     diagnostics=records, algo="fms", step_size=None)


def distributed_gmedian(data: PartitionedDataset, graph: NetworkGraph,
                        cfg: ConsensusConfig, delta: float = 1e-10,
                        inner_iterations: int = 100) -> ConsensusRun:
    """Decentralized regularized geometric median.

    Vector-valued consensus: the per-node solve is the reweighted-average
    iteration with the aggregated edge term folded in.  The per-node
    median estimates are the ``q`` fields of the returned states.
    """
    blocks = [LocalDataset(block, require_full_rank=False) for block in data.blocks]
    dim = data.ambient_dim

    def solver(_k, dataset, dual, prev):
        a = np.zeros(dim) if dual is None else dual
        return gmedian_local_solve(dataset, a, delta, inner_iterations,
                                   initial_y=prev)

    def objective_fn(_k, dataset, y, dual):
        dist = _row_norms(dataset.points - y)
        return _huber_sum(dist, delta) + float(dual @ y)

    return cbga_run(solver, blocks, graph, cfg, objective_fn=objective_fn,
                    algo="gmedian")

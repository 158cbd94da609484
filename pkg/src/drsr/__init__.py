"""Decentralized robust subspace recovery over ad hoc networks."""

from .consensus import (
    CompressedState,
    ConsensusConfig,
    ConsensusRun,
    NodeState,
    cadmm_run,
    cbga_run,
    cbga_update_dual,
    compress_state,
    decompress,
    practical_step_size,
    write_diagnostics,
)
from .data import (
    PartitionedDataset,
    SyntheticConfig,
    center_by_gmedian,
    generate_synthetic,
    load_csv,
    ose_sketch,
    partition,
    save_csv,
)
from .errors import (
    ConfigurationError,
    CsvParseError,
    DegenerateSpectrumWarning,
    DrsrError,
    EngineError,
    IterateNotPositiveDefiniteError,
    PreconditionError,
    ProtocolError,
    RankDeficientDataError,
    SingularCoefficientError,
    TraceConditionError,
)
from .graph import NetworkGraph, canned_topology, edge_sign, generate_random_topology
from .local_solvers import (
    GmsParams,
    LocalDataset,
    cadmm_local_solve,
    gmedian_local_solve,
    gms_local_solve,
    gms_majorizer,
    gms_objective,
    gms_weight_matrix,
    pca_local_solve,
)
from .matops import (
    SpectralDecomposition,
    solve_lyapunov,
    solve_trace_one_lyapunov,
    spectral_decompose,
    symmetrize,
)
from .rsr import (
    RsrResult,
    Subspace,
    distributed_fms,
    distributed_gmedian,
    distributed_gms,
    distributed_pca_cbga,
    distributed_pca_exact,
    distributed_reaper,
    extract_subspace,
    recovery_error,
)

__version__ = "0.1.0"

"""Synthetic data generation, dataset ingestion, sketching, and centering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CsvParseError, PreconditionError
from .matops import fix_eigenvector_signs


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic inlier/outlier model.

    Per node: ``N1 / K`` inliers drawn on a random d-subspace with
    isotropic noise of scale sigma, and ``N0 / K`` outliers drawn
    uniformly from the unit cube (asymmetric on purpose).
    """

    K: int
    N0: int
    N1: int
    D: int
    d: int
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if self.N0 < 0 or self.N1 < 0:
            raise ConfigurationError("point counts must be nonnegative")
        if self.N0 % self.K or self.N1 % self.K:
            raise ConfigurationError(
                f"K={self.K} must divide N0={self.N0} and N1={self.N1}")
        if (self.N0 + self.N1) // self.K < 1:
            raise ConfigurationError("each node needs at least one point")
        if not 1 <= self.d < self.D:
            raise ConfigurationError(f"need 1 <= d < D, got d={self.d}, D={self.D}")
        if not 0.0 <= self.sigma < 1.0:
            raise ConfigurationError(f"sigma must be in [0, 1), got {self.sigma}")


class PartitionedDataset:
    """K blocks of points in R^D, one block per node."""

    def __init__(self, blocks):
        blocks = [np.ascontiguousarray(np.asarray(b, dtype=float)) for b in blocks]
        if not blocks:
            raise PreconditionError("at least one block is required")
        dims = {b.shape[1] for b in blocks if b.ndim == 2}
        if any(b.ndim != 2 for b in blocks) or len(dims) != 1:
            raise PreconditionError("all blocks must be 2-d arrays of equal width")
        self.blocks = blocks
        self.ambient_dim = blocks[0].shape[1]

    @property
    def node_count(self) -> int:
        return len(self.blocks)

    @property
    def total_points(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def pooled(self) -> np.ndarray:
        return np.vstack(self.blocks)

    def __repr__(self) -> str:
        sizes = [b.shape[0] for b in self.blocks]
        return f"PartitionedDataset(K={self.node_count}, D={self.ambient_dim}, sizes={sizes})"


def generate_synthetic(cfg: SyntheticConfig):
    """Sample the synthetic model; returns ``(dataset, truth_subspace)``.

    Deterministic for a given seed: the subspace basis, then each node's
    inliers and outliers, are drawn from one seeded generator.
    """
    from .rsr import Subspace

    rng = np.random.default_rng(cfg.seed)
    basis, _ = np.linalg.qr(rng.standard_normal((cfg.D, cfg.d)))
    basis = fix_eigenvector_signs(basis)
    n1k, n0k = cfg.N1 // cfg.K, cfg.N0 // cfg.K
    blocks = []
    for _ in range(cfg.K):
        coords = rng.standard_normal((n1k, cfg.d))
        inliers = coords @ basis.T
        if cfg.sigma > 0:
            inliers = inliers + cfg.sigma * rng.standard_normal((n1k, cfg.D))
        outliers = rng.random((n0k, cfg.D))
        blocks.append(np.vstack([inliers, outliers]))
    return PartitionedDataset(blocks), Subspace(basis=basis)


def outlier_fraction(cfg: SyntheticConfig) -> float:
    return cfg.N0 / (cfg.N0 + cfg.N1)


def ose_sketch(data: PartitionedDataset, target_dim: int, seed: int,
               per_column: bool = False) -> PartitionedDataset:
    """Apply one shared sparse sign embedding to every point.

    The default sketch matrix has exactly one nonzero entry (a random
    sign) per row, at a uniformly random column.  ``per_column=True``
    switches to the variant with one nonzero per column instead.
    """
    dim = data.ambient_dim
    if not 1 <= target_dim < dim:
        raise ConfigurationError(
            f"target_dim must satisfy 1 <= target_dim < D={dim}, got {target_dim}")
    rng = np.random.default_rng(seed)
    h = np.zeros((target_dim, dim))
    if per_column:
        rows = rng.integers(0, target_dim, size=dim)
        signs = rng.choice((-1.0, 1.0), size=dim)
        h[rows, np.arange(dim)] = signs
    else:
        cols = rng.integers(0, dim, size=target_dim)
        signs = rng.choice((-1.0, 1.0), size=target_dim)
        h[np.arange(target_dim), cols] = signs
    return PartitionedDataset([block @ h.T for block in data.blocks])


def center_by_gmedian(data: PartitionedDataset, graph, delta: float,
                      cfg) -> PartitionedDataset:
    """Subtract each node's consensus geometric-median estimate from its block."""
    from .rsr import distributed_gmedian

    run = distributed_gmedian(data, graph, cfg, delta)
    return PartitionedDataset([
        block - run.states[k].q for k, block in enumerate(data.blocks)])


def _parse_cell(cell: str, row: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CsvParseError(f"row {row}: non-numeric cell {cell!r}", row=row) from None


def load_csv(path) -> np.ndarray:
    """Load a rectangular numeric CSV, one point per row.

    A non-numeric first row is treated as a header.  Ragged or
    non-numeric rows raise CsvParseError with the offending 1-based row
    number.
    """
    lines = Path(path).read_text().splitlines()
    rows = [(i + 1, line.split(",")) for i, line in enumerate(lines) if line.strip()]
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    start = 0
    try:
        [float(cell) for cell in rows[0][1]]
    except ValueError:
        start = 1
        if len(rows) == 1:
            raise CsvParseError(f"{path}: header only, no data rows") from None
    width = len(rows[start][1])
    parsed = []
    for row_number, cells in rows[start:]:
        if len(cells) != width:
            raise CsvParseError(
                f"row {row_number}: expected {width} columns, got {len(cells)}",
                row=row_number)
        parsed.append([_parse_cell(cell, row_number) for cell in cells])
    return np.asarray(parsed, dtype=float)


def save_csv(points: np.ndarray, path, header: str | None = None) -> None:
    """Write points as CSV with enough digits to round-trip float64 exactly."""
    points = np.asarray(points, dtype=float)
    with open(path, "w") as handle:
        if header:
            handle.write(header + "\n")
        for row in np.atleast_2d(points):
            handle.write(",".join(repr(float(v)) for v in row) + "\n")


def partition(points: np.ndarray, node_count: int,
              policy: str = "contiguous") -> PartitionedDataset:
    """Split pooled points into K blocks, preserving the multiset exactly."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise PreconditionError(f"points must be 2-d, got shape {points.shape}")
    if node_count < 1 or node_count > points.shape[0]:
        raise ConfigurationError(
            f"node_count must be in 1..{points.shape[0]}, got {node_count}")
    if policy == "contiguous":
        blocks = np.array_split(points, node_count)
    elif policy == "round_robin":
        blocks = [points[k::node_count] for k in range(node_count)]
    else:
        raise ConfigurationError(f"unknown partition policy {policy!r}")
    return PartitionedDataset(blocks)

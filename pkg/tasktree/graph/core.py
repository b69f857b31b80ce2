# Copyright (c) 2025 tasktree authors
#
# tasktree is licensed under Mulan PSL v2.
# You can use this software according to the terms and conditions of the Mulan PSL v2.
# You may obtain a copy of Mulan PSL v2 at:
#          http://license.coscl.org.cn/MulanPSL2
#
# THIS SOFTWARE IS PROVIDED ON AN "AS IS" BASIS, WITHOUT WARRANTIES OF ANY KIND,
# EITHER EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO NON-INFRINGEMENT,
# MERCHANTABILITY OR FIT FOR A PARTICULAR PURPOSE.
#
# See the Mulan PSL v2 for more details.

"""
Undirected CSR graphs with dense node features.

A Graph is immutable once built: its arrays are flagged read-only and the
derived sparse operators are cached on first use, so one instance can be
shared freely across threads and pipelines.
"""

import dataclasses
import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from tasktree.errors import ConfigError, DimensionError, FormatError, GraphLoadError

logger = logging.getLogger(__name__)


def _readonly(array: np.ndarray) -> np.ndarray:
    # private copy: callers keep ownership of what they passed in
    array = np.array(array, order="C")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Symmetric CSR adjacency plus a float64 feature matrix.

    Attributes:
        indptr: CSR row offsets, length num_nodes + 1
        indices: sorted, duplicate-free neighbor ids per row
        features: num_nodes x d matrix of finite float64 values
        graph_id_of_node: optional component id per node (multi-graph datasets)
    """
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    graph_id_of_node: Optional[np.ndarray] = None

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        features = np.asarray(self.features, dtype=np.float64)

        if features.ndim != 2:
            raise DimensionError(f"features must be a 2-D matrix, got shape {features.shape}")
        num_nodes = features.shape[0]
        if indptr.shape != (num_nodes + 1,):
            raise DimensionError(f"indptr must have length {num_nodes + 1}, got {indptr.shape[0]}")
        if indptr[0] != 0 or indptr[-1] != indices.shape[0] or np.any(np.diff(indptr) < 0):
            raise GraphLoadError("CSR offsets must be nondecreasing from 0 to the endpoint count")
        if indices.size and (indices.min() < 0 or indices.max() >= num_nodes):
            raise GraphLoadError("CSR targets out of node range")
        if not np.all(np.isfinite(features)):
            row = int(np.nonzero(~np.all(np.isfinite(features), axis=1))[0][0])
            raise FormatError(f"non-finite feature value in row {row}")

        object.__setattr__(self, "indptr", _readonly(indptr))
        object.__setattr__(self, "indices", _readonly(indices))
        object.__setattr__(self, "features", _readonly(features))
        if self.graph_id_of_node is not None:
            ids = np.asarray(self.graph_id_of_node, dtype=np.int64)
            if ids.shape != (num_nodes,):
                raise DimensionError(f"graph_id_of_node must have length {num_nodes}, got {ids.shape}")
            object.__setattr__(self, "graph_id_of_node", _readonly(ids))

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features, graph_id_of_node=None) -> 'Graph':
        """Build a graph from (u, v) pairs; pairs are symmetrized and deduplicated"""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise GraphLoadError(f"edge endpoint out of range for {num_nodes} nodes")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adjacency = sp.coo_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(num_nodes, num_nodes))
        return cls.from_adjacency(adjacency, features, graph_id_of_node)

    @classmethod
    def from_adjacency(cls, adjacency, features, graph_id_of_node=None) -> 'Graph':
        """Build a graph from a sparse matrix whose nonzero pattern is the edge set"""
        csr = sp.csr_matrix(adjacency)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        pattern = (csr != 0).astype(np.int8)
        asymmetric = pattern - pattern.T
        if asymmetric.count_nonzero():
            raise GraphLoadError("adjacency is not symmetric")
        return cls(indptr=csr.indptr, indices=csr.indices, features=features,
                   graph_id_of_node=graph_id_of_node)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Undirected edge count; a self-loop counts once"""
        loops = int(np.count_nonzero(self.indices == self.row_of_entry))
        return (self.indices.shape[0] - loops) // 2 + loops

    @cached_property
    def degrees(self) -> np.ndarray:
        return _readonly(np.diff(self.indptr))

    @cached_property
    def row_of_entry(self) -> np.ndarray:
        return _readonly(np.repeat(np.arange(self.num_nodes), self.degrees))

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = np.searchsorted(row, v)
        return bool(pos < row.shape[0] and row[pos] == v)

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        data = np.ones(self.indices.shape[0])
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))

    @cached_property
    def mean_operator(self) -> sp.csr_matrix:
        """Row-stochastic neighbor-mean operator; isolated rows are zero"""
        return _mean_operator_from(self.adjacency_matrix)

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once as (u, v) with u <= v"""
        mask = self.row_of_entry <= self.indices
        return np.stack([self.row_of_entry[mask], self.indices[mask]], axis=1)

    def with_features(self, features) -> 'Graph':
        return dataclasses.replace(self, features=features)


def _mean_operator_from(adjacency: sp.csr_matrix) -> sp.csr_matrix:
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    inv = np.divide(1.0, degrees, out=np.zeros_like(degrees, dtype=np.float64), where=degrees > 0)
    return sp.csr_matrix(sp.diags(inv) @ adjacency)


@dataclass(frozen=True)
class FeatureStats:
    max_row_norm: float
    mean: np.ndarray
    std: np.ndarray


def _read_rows(path, what: str) -> List[str]:
    try:
        with open(path, 'r') as f:
            return [line for line in f if line.strip()]
    except OSError as e:
        raise GraphLoadError(f"cannot read {what} file {path}: {e}") from e


def parse_matrix(path, what: str = "feature") -> np.ndarray:
    """Parse whitespace-separated float rows, rejecting ragged or non-finite rows"""
    lines = _read_rows(path, what)
    if not lines:
        raise GraphLoadError(f"{what} file {path} has no rows")
    try:
        matrix = np.loadtxt(lines, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise FormatError(f"{what} file {path}: {e}") from e
    finite = np.all(np.isfinite(matrix), axis=1)
    if not np.all(finite):
        row = int(np.nonzero(~finite)[0][0])
        raise FormatError(f"{what} file {path}: non-finite value in row {row}")
    return matrix


def parse_edges(path) -> np.ndarray:
    lines = _read_rows(path, "edge")
    if not lines:
        return np.zeros((0, 2), dtype=np.int64)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            edges = np.loadtxt(lines, dtype=np.int64, ndmin=2)
    except ValueError as e:
        raise FormatError(f"edge file {path}: {e}") from e
    if edges.shape[1] != 2:
        raise FormatError(f"edge file {path}: rows must be 'u v' pairs, got {edges.shape[1]} columns")
    return edges


def load_graph(edge_path, feature_path) -> Graph:
    """
    Load an undirected graph from the text format.

    Args:
        edge_path: file of "u v" integer rows
        feature_path: file whose row i holds the features of node i

    Returns:
        Graph: symmetrized, deduplicated graph; self-loops preserved
    """
    features = parse_matrix(feature_path)
    edges = parse_edges(edge_path)
    num_nodes = features.shape[0]
    bad = np.nonzero((edges < 0) | (edges >= num_nodes))[0]
    if bad.size:
        u, v = edges[bad[0]]
        raise GraphLoadError(
            f"edge file {edge_path}: row {int(bad[0])} ({u} {v}) references a node outside [0, {num_nodes})")
    graph = Graph.from_edges(num_nodes, edges, features)
    logger.debug(f"Loaded graph with {graph.num_nodes} nodes and {graph.num_edges} edges from {edge_path}")
    return graph


def save_graph(g: Graph, edge_path, feature_path):
    """Write the text format so that load_graph reproduces g bit-exactly"""
    Path(edge_path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(edge_path, g.edge_list(), fmt="%d")
    np.savetxt(feature_path, g.features, fmt="%.17g")


def feature_stats(g: Graph) -> FeatureStats:
    if g.num_nodes == 0:
        zeros = np.zeros(g.feature_dim)
        return FeatureStats(0.0, zeros, zeros)
    norms = np.linalg.norm(g.features, axis=1)
    return FeatureStats(max_row_norm=float(norms.max()),
                        mean=g.features.mean(axis=0),
                        std=g.features.std(axis=0))


def row_normalize(g: Graph) -> Graph:
    norms = np.linalg.norm(g.features, axis=1, keepdims=True)
    scaled = np.divide(g.features, norms, out=np.zeros_like(g.features), where=norms > 0)
    return g.with_features(scaled)


def neighbor_sample(g: Graph, node: int, fanout: int, rng: np.random.Generator) -> np.ndarray:
    """
    Uniformly sample up to `fanout` neighbors of `node` without replacement.

    Returns all neighbors when the degree does not exceed the fanout; an
    isolated node yields an empty array.
    """
    if fanout < 1:
        raise ConfigError(f"fanout must be at least 1, got {fanout}")
    neighbors = g.neighbors(node)
    if neighbors.shape[0] <= fanout:
        return neighbors.copy()
    return np.sort(rng.choice(neighbors, size=fanout, replace=False))


def sample_mean_operator(g: Graph, fanout: int, rng: np.random.Generator) -> sp.csr_matrix:
    """Neighbor-mean operator over a fresh fanout-limited sample of every row"""
    if fanout < 1:
        raise ConfigError(f"fanout must be at least 1, got {fanout}")
    if g.degrees.size == 0 or g.degrees.max() <= fanout:
        return g.mean_operator
    keys = rng.random(g.indices.shape[0])
    order = np.lexsort((keys, g.row_of_entry))
    rank = np.arange(order.shape[0]) - g.indptr[g.row_of_entry[order]]
    keep = np.sort(order[rank < fanout])
    sampled = sp.csr_matrix((np.ones(keep.shape[0]), (g.row_of_entry[keep], g.indices[keep])),
                            shape=(g.num_nodes, g.num_nodes))
    return _mean_operator_from(sampled)


def truncated_svd(features, target_dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sign-fixed rank-k SVD.

    Returns:
        Tuple: (U_k * S_k, Vt_k); the largest-magnitude entry of every left
        singular vector is positive
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {features.shape}")
    limit = min(features.shape)
    if not 1 <= target_dim <= limit:
        raise DimensionError(f"target_dim {target_dim} outside [1, {limit}] for shape {features.shape}")
    u, s, vt = np.linalg.svd(features, full_matrices=False)
    u, s, vt = u[:, :target_dim], s[:target_dim], vt[:target_dim]
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivot, np.arange(target_dim)] < 0, -1.0, 1.0)
    return u * (s * signs), vt * signs[:, None]


def svd_project(features, target_dim: int) -> np.ndarray:
    return truncated_svd(features, target_dim)[0]


def align_features(graphs: Sequence[Graph], target_dim: int) -> List[Graph]:
    """Project every graph's features into a shared target_dim space"""
    aligned = []
    for g in graphs:
        aligned.append(g.with_features(svd_project(g.features, target_dim)))
        logger.info(f"Aligned features {g.feature_dim} -> {target_dim} over {g.num_nodes} nodes")
    return aligned


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Subgraph induced by `nodes` (sorted ids), remapped densely in that order"""
    nodes = np.asarray(nodes, dtype=np.int64)
    sub = g.adjacency_matrix[nodes][:, nodes]
    ids = None if g.graph_id_of_node is None else g.graph_id_of_node[nodes]
    return Graph.from_adjacency(sub, g.features[nodes], ids)


def disjoint_union(graphs: Sequence[Graph]) -> Graph:
    """
    Place graphs side by side without cross edges.

    Component ids are offset per input graph; a graph that already carries
    component ids keeps its grouping.
    A single graph comes back unchanged, ids included.
    """
    if not graphs:
        raise ConfigError("disjoint_union needs at least one graph")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise DimensionError(f"cannot union graphs with mixed feature dims {sorted(dims)}")
    if len(graphs) == 1:
        return graphs[0]

    ids, offset = [], 0
    for g in graphs:
        local = np.zeros(g.num_nodes, dtype=np.int64) if g.graph_id_of_node is None else g.graph_id_of_node
        ids.append(local + offset)
        offset += int(local.max()) + 1 if local.size else 1

    adjacency = sp.block_diag([g.adjacency_matrix for g in graphs], format="csr")
    features = np.vstack([g.features for g in graphs])
    return Graph.from_adjacency(adjacency, features, np.concatenate(ids))

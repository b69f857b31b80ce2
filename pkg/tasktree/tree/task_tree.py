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
Task-trees: node, edge and graph instances as one learning unit.

Every instance is reduced to its task-relevant nodes. The task-tree
embedding is the mean of the encoder outputs at those nodes, computed on
the original graph. Appending one virtual node per task, wired to its
relevant nodes, gives the same quantity as one extra mean step at the
virtual node; encode_virtual_nodes implements that path as a cross-check.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from tasktree.errors import ConfigError, MalformedTaskError
from tasktree.graph.core import Graph, induced_subgraph

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    NODE = "node"
    EDGE = "edge"
    GRAPH = "graph"


_ARITY = {TaskKind.NODE: 1, TaskKind.EDGE: 2}


@dataclass(frozen=True)
class TaskInstance:
    kind: TaskKind
    relevant: Tuple[int, ...]
    label: int
    # component id, graph tasks only
    component: Optional[int] = None

    def __post_init__(self):
        try:
            kind = TaskKind(self.kind)
        except ValueError as e:
            raise MalformedTaskError(f"unknown task kind {self.kind!r}") from e
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "relevant", tuple(int(v) for v in self.relevant))
        object.__setattr__(self, "label", int(self.label))
        arity = _ARITY.get(kind)
        if arity is not None and len(self.relevant) != arity:
            raise MalformedTaskError(f"{kind.value} task needs {arity} node(s), got {len(self.relevant)}")

    @classmethod
    def node(cls, v: int, label: int) -> 'TaskInstance':
        return cls(TaskKind.NODE, (v,), label)

    @classmethod
    def edge(cls, u: int, v: int, label: int) -> 'TaskInstance':
        return cls(TaskKind.EDGE, (u, v), label)

    @classmethod
    def graph(cls, nodes: Sequence[int], label: int, component: Optional[int] = None) -> 'TaskInstance':
        return cls(TaskKind.GRAPH, tuple(nodes), label, component)

    def remapped(self, mapping: np.ndarray) -> 'TaskInstance':
        """Same task after relabeling node v to mapping[v]"""
        return TaskInstance(self.kind, tuple(int(mapping[v]) for v in self.relevant), self.label, self.component)


def relevant_nodes(task: TaskInstance, g: Graph) -> np.ndarray:
    """
    Task-relevant nodes of one instance.

    Node tasks yield the node, edge tasks both endpoints, graph tasks every
    node of the component (looked up through graph_id_of_node when the task
    names a component, otherwise the listed nodes).
    """
    if task.kind is TaskKind.GRAPH and task.component is not None and g.graph_id_of_node is not None:
        nodes = np.nonzero(g.graph_id_of_node == task.component)[0]
    else:
        nodes = np.asarray(task.relevant, dtype=np.int64)
    if nodes.size == 0:
        raise MalformedTaskError(f"{task.kind.value} task has no relevant nodes")
    if nodes.min() < 0 or nodes.max() >= g.num_nodes:
        raise MalformedTaskError(f"{task.kind.value} task references a node outside [0, {g.num_nodes})")
    return nodes


def pooling_matrix(g: Graph, tasks: Sequence[TaskInstance]) -> sp.csr_matrix:
    """|tasks| x num_nodes matrix whose row k averages the relevant rows of task k"""
    rows, cols, vals = [], [], []
    for k, task in enumerate(tasks):
        nodes = relevant_nodes(task, g)
        rows.append(np.full(nodes.shape[0], k))
        cols.append(nodes)
        vals.append(np.full(nodes.shape[0], 1.0 / nodes.shape[0]))
    if not tasks:
        return sp.csr_matrix((0, g.num_nodes))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(len(tasks), g.num_nodes))


@dataclass(frozen=True, eq=False)
class AugmentedGraph:
    base: Graph
    graph: Graph
    virtual_offset: int
    task_of_virtual: Dict[int, int] = field(default_factory=dict)

    @property
    def num_virtual(self) -> int:
        return self.graph.num_nodes - self.virtual_offset


def augment_with_task_nodes(g: Graph, tasks: Sequence[TaskInstance]) -> AugmentedGraph:
    """Append one virtual node per task, connected to its relevant nodes only"""
    if not tasks:
        return AugmentedGraph(base=g, graph=g, virtual_offset=g.num_nodes)

    pool = pooling_matrix(g, tasks)
    incidence = (pool != 0).astype(np.float64).T
    adjacency = sp.bmat([[g.adjacency_matrix, incidence], [incidence.T, None]], format="csr")
    features = np.vstack([g.features, pool @ g.features])

    ids = None
    if g.graph_id_of_node is not None:
        first = [int(relevant_nodes(t, g)[0]) for t in tasks]
        ids = np.concatenate([g.graph_id_of_node, g.graph_id_of_node[first]])

    augmented = Graph.from_adjacency(adjacency, features, ids)
    offset = g.num_nodes
    return AugmentedGraph(base=g, graph=augmented, virtual_offset=offset,
                          task_of_virtual={offset + k: k for k in range(len(tasks))})


def encode_task_trees(params, g: Graph, tasks: Sequence[TaskInstance], mode: str = "eval",
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Task-tree embeddings: mean of the encoder outputs at the relevant nodes (pre-projector)"""
    from tasktree.model.encoder import forward

    return pooling_matrix(g, tasks) @ forward(params, g, mode=mode, rng=rng)


def encode_virtual_nodes(params, g: Graph, tasks: Sequence[TaskInstance]) -> np.ndarray:
    """
    Task-tree embeddings read off the augmented graph.

    Base-node embeddings come from the base graph; the virtual rows are then
    produced by a single plain mean step over the augmented adjacency.
    """
    from tasktree.model.encoder import forward

    augmented = augment_with_task_nodes(g, tasks)
    base = forward(params, g, mode="eval")
    padded = np.vstack([base, np.zeros((augmented.num_virtual, base.shape[1]))])
    return (augmented.graph.mean_operator @ padded)[augmented.virtual_offset:]


@dataclass(frozen=True)
class SubtreeInfo:
    """x^(l) for l = 0..depth-1; levels[0] is the raw feature matrix"""
    levels: List[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def of_nodes(self, nodes) -> np.ndarray:
        """depth x len(nodes) x d stack of subtree vectors"""
        return np.stack([level[nodes] for level in self.levels])


def subtree_info(g: Graph, depth: int) -> SubtreeInfo:
    if depth < 1:
        raise ConfigError(f"subtree depth must be at least 1, got {depth}")
    levels = [np.array(g.features)]
    for _ in range(1, depth):
        levels.append(g.mean_operator @ levels[-1])
    return SubtreeInfo(levels)


def ego_node_set(g: Graph, roots, hops: int) -> np.ndarray:
    """Sorted ids of all nodes within `hops` of any root"""
    if hops < 1:
        raise ConfigError(f"hops must be at least 1, got {hops}")
    visited = np.zeros(g.num_nodes, dtype=bool)
    frontier = np.unique(np.asarray(roots, dtype=np.int64))
    visited[frontier] = True
    for _ in range(hops):
        if frontier.size == 0:
            break
        reached = np.unique(g.adjacency_matrix[frontier].indices)
        frontier = reached[~visited[reached]]
        visited[frontier] = True
    return np.nonzero(visited)[0]


def extract_ego_subgraph(g: Graph, roots, hops: int, return_nodes: bool = False):
    """
    Induced subgraph on the `hops`-neighborhood of the roots.

    Node ids are remapped densely in ascending original order. With
    return_nodes the original ids are returned alongside the subgraph.
    """
    nodes = ego_node_set(g, roots, hops)
    subgraph = induced_subgraph(g, nodes)
    return (subgraph, nodes) if return_nodes else subgraph


def add_negative_links(tasks: Sequence[TaskInstance], g: Graph, rng: np.random.Generator,
                       max_tries: int = 100) -> List[TaskInstance]:
    """
    Pair every positive edge task with a uniformly sampled non-edge (label 0).

    Raises:
        ConfigError: the graph is too dense to find enough non-edges
    """
    positives = [t for t in tasks if t.kind is TaskKind.EDGE]
    negatives: List[TaskInstance] = []
    taken = set()
    for _ in range(max_tries * max(1, len(positives))):
        if len(negatives) == len(positives):
            break
        u, v = (int(x) for x in rng.integers(0, g.num_nodes, size=2))
        key = (min(u, v), max(u, v))
        if u == v or key in taken or g.has_edge(u, v):
            continue
        taken.add(key)
        negatives.append(TaskInstance.edge(key[0], key[1], 0))
    if len(negatives) < len(positives):
        raise ConfigError(f"found only {len(negatives)} non-edges for {len(positives)} positive links")
    logger.debug(f"Sampled {len(negatives)} negative links")
    return list(tasks) + negatives

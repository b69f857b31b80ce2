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
Dataset bundles on disk.

A bundle directory holds:

    edges.txt          "u v" rows
    features.txt       one feature row per node
    tasks.txt          "kind node-ids... label" rows, kind in {node, edge, graph}
    splits.txt         "split-name task-index" rows
    class_vectors.txt  optional, one instruction row per class
    graph_ids.txt      optional, component id per node
    meta.yaml          optional, {name, metric, num_classes}
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from tasktree.errors import ConfigError, DimensionError, FormatError, GraphLoadError
from tasktree.graph.core import Graph, load_graph, parse_matrix, save_graph
from tasktree.tree.task_tree import TaskInstance, TaskKind, relevant_nodes

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "auc")
SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    name: str
    graph: Graph
    tasks: List[TaskInstance]
    num_classes: int
    splits: Dict[str, np.ndarray] = field(default_factory=dict)
    class_vectors: Optional[np.ndarray] = None
    metric: str = "accuracy"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"dataset {self.name}: metric must be one of {METRICS}, got {self.metric!r}")
        labels = self.labels
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigError(f"dataset {self.name}: task label outside [0, {self.num_classes})")

        seen = np.zeros(len(self.tasks), dtype=bool)
        for split_name, index in list(self.splits.items()):
            index = np.asarray(index, dtype=np.int64)
            if index.size and (index.min() < 0 or index.max() >= len(self.tasks)):
                raise ConfigError(f"dataset {self.name}: split '{split_name}' references a missing task")
            if np.any(seen[index]) or np.unique(index).size != index.size:
                raise ConfigError(f"dataset {self.name}: split '{split_name}' overlaps another split")
            seen[index] = True
            self.splits[split_name] = index

        if self.class_vectors is not None:
            self.class_vectors = np.asarray(self.class_vectors, dtype=np.float64)
            if self.class_vectors.ndim != 2 or self.class_vectors.shape[0] != self.num_classes:
                raise DimensionError(
                    f"dataset {self.name}: class_vectors must have {self.num_classes} rows, "
                    f"got shape {self.class_vectors.shape}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.tasks], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.tasks)

    def split_index(self, split_name: str) -> np.ndarray:
        if split_name not in self.splits:
            raise ConfigError(f"dataset {self.name} has no '{split_name}' split")
        return self.splits[split_name]

    def split_tasks(self, split_name: str) -> List[TaskInstance]:
        return [self.tasks[i] for i in self.split_index(split_name)]


def _parse_task(line: str, lineno: int, path) -> TaskInstance:
    parts = line.split()
    if len(parts) < 3:
        raise FormatError(f"{path}:{lineno}: expected 'kind node-ids... label'")
    try:
        kind = TaskKind(parts[0])
        values = [int(p) for p in parts[1:]]
    except ValueError as e:
        raise FormatError(f"{path}:{lineno}: {e}") from e
    return TaskInstance(kind=kind, relevant=tuple(values[:-1]), label=values[-1])


def load_tasks(path) -> List[TaskInstance]:
    with open(path, 'r') as f:
        return [_parse_task(line, lineno, path) for lineno, line in enumerate(f, 1) if line.strip()]


def load_splits(path) -> Dict[str, np.ndarray]:
    splits: Dict[str, List[int]] = {}
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'split-name task-index'")
            try:
                splits.setdefault(parts[0], []).append(int(parts[1]))
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
    return {name: np.array(index, dtype=np.int64) for name, index in splits.items()}


def load_dataset(directory) -> Dataset:
    """
    Load a dataset bundle directory.

    Args:
        directory: bundle path

    Returns:
        Dataset: validated dataset; graph tasks are bound to their component
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise GraphLoadError(f"dataset directory {directory} does not exist")

    meta = {}
    if (directory / "meta.yaml").exists():
        with open(directory / "meta.yaml", 'r') as f:
            meta = yaml.safe_load(f) or {}

    graph = load_graph(directory / "edges.txt", directory / "features.txt")
    if (directory / "graph_ids.txt").exists():
        ids = parse_matrix(directory / "graph_ids.txt", "graph id").astype(np.int64).ravel()
        graph = Graph(graph.indptr, graph.indices, graph.features, ids)

    tasks = load_tasks(directory / "tasks.txt")
    if graph.graph_id_of_node is not None:
        tasks = [_bind_component(t, graph) for t in tasks]
    for task in tasks:
        relevant_nodes(task, graph)

    splits = load_splits(directory / "splits.txt") if (directory / "splits.txt").exists() else {}
    class_vectors = None
    if (directory / "class_vectors.txt").exists():
        class_vectors = parse_matrix(directory / "class_vectors.txt", "class vector")

    label_classes = max((t.label for t in tasks), default=-1) + 1
    vector_classes = 0 if class_vectors is None else class_vectors.shape[0]
    num_classes = int(meta.get("num_classes", max(label_classes, vector_classes)))

    dataset = Dataset(name=str(meta.get("name", directory.name)), graph=graph, tasks=tasks,
                      num_classes=num_classes, splits=splits, class_vectors=class_vectors,
                      metric=str(meta.get("metric", "accuracy")))
    logger.info(f"Loaded dataset {dataset.name}: {graph.num_nodes} nodes, {len(tasks)} tasks, "
                f"{num_classes} classes")
    return dataset


def _bind_component(task: TaskInstance, graph: Graph) -> TaskInstance:
    if task.kind is not TaskKind.GRAPH or task.component is not None:
        return task
    component = int(graph.graph_id_of_node[task.relevant[0]])
    return TaskInstance(kind=task.kind, relevant=task.relevant, label=task.label, component=component)


def save_dataset(dataset: Dataset, directory):
    """Write a dataset bundle; load_dataset reproduces it exactly"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_graph(dataset.graph, directory / "edges.txt", directory / "features.txt")
    if dataset.graph.graph_id_of_node is not None:
        np.savetxt(directory / "graph_ids.txt", dataset.graph.graph_id_of_node, fmt="%d")

    with open(directory / "tasks.txt", 'w') as f:
        for task in dataset.tasks:
            nodes = " ".join(str(v) for v in relevant_nodes(task, dataset.graph))
            f.write(f"{task.kind.value} {nodes} {task.label}\n")

    with open(directory / "splits.txt", 'w') as f:
        for split_name, index in dataset.splits.items():
            for i in index:
                f.write(f"{split_name} {int(i)}\n")

    if dataset.class_vectors is not None:
        np.savetxt(directory / "class_vectors.txt", dataset.class_vectors, fmt="%.17g")

    meta = {"name": dataset.name, "metric": dataset.metric, "num_classes": int(dataset.num_classes)}
    with open(directory / "meta.yaml", 'w') as f:
        yaml.safe_dump(meta, f, sort_keys=True)
    logger.debug(f"Saved dataset {dataset.name} to {directory}")

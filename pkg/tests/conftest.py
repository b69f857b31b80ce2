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

import numpy as np
import pytest

from tasktree.config.run_config import CorruptionConfig, EncoderConfig, PretrainConfig, SFTConfig, SynthConfig
from tasktree.graph.core import Graph
from tasktree.graph.dataset import Dataset
from tasktree.tree.task_tree import TaskInstance


def random_graph(seed: int, num_nodes: int, feature_dim: int, p: float = 0.3) -> Graph:
    """Erdos-Renyi graph drawn with numpy only, standard normal features"""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((num_nodes, num_nodes)) < p, k=1)
    edges = np.argwhere(upper)
    return Graph.from_edges(num_nodes, edges, rng.normal(size=(num_nodes, feature_dim)))


def cluster_dataset(num_classes: int = 3, per_class: int = 12, dim: int = 4, separation: float = 50.0,
                    seed: int = 0, metric: str = "accuracy") -> Dataset:
    """Edgeless graph of tight Gaussian clusters, one node task per node"""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    means = np.eye(num_classes, dim) * separation
    features = means[labels] + rng.normal(0.0, 0.1, size=(labels.shape[0], dim))
    graph = Graph.from_edges(labels.shape[0], np.zeros((0, 2), dtype=np.int64), features)
    tasks = [TaskInstance.node(v, int(labels[v])) for v in range(labels.shape[0])]
    order = rng.permutation(len(tasks))
    n_train, n_val = int(0.6 * len(tasks)), int(0.2 * len(tasks))
    splits = {"train": np.sort(order[:n_train]), "val": np.sort(order[n_train:n_train + n_val]),
              "test": np.sort(order[n_train + n_val:])}
    return Dataset(name="clusters", graph=graph, tasks=tasks, num_classes=num_classes, splits=splits,
                   metric=metric)


@pytest.fixture
def path_graph() -> Graph:
    """a - b - c with two-dimensional features"""
    features = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 1.0]])
    return Graph.from_edges(3, [(0, 1), (1, 2)], features)


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(nodes_per_class=20, num_classes=2, feature_dim=8, separation=5.0,
                       p_in=0.3, p_out=0.02, motif_graphs_per_class=10, motif_size=3)


@pytest.fixture
def tiny_encoder() -> EncoderConfig:
    return EncoderConfig(hidden_dim=8, num_layers=2, dropout=0.0)


@pytest.fixture
def tiny_pretrain() -> PretrainConfig:
    return PretrainConfig(epochs=3, batch_size=32, learning_rate=0.005, weight_decay=0.0, lam=10.0,
                          fanout=10, seed=3)


@pytest.fixture
def tiny_sft() -> SFTConfig:
    return SFTConfig(epochs=3, learning_rate=0.005, batch_size=16, seed=3)


@pytest.fixture
def corruption() -> CorruptionConfig:
    return CorruptionConfig(edge_drop_rate=0.2, feature_mask_rate=0.2)

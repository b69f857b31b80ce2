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
Desk-scale two-domain benchmark.

domain_a  stochastic-block-model communities, class-dependent Gaussian
          features, one node task per node
domain_b  small motif graphs (triangle-rich windmills vs stars of the same
          size), degree one-hot features, one graph task per graph

Both domains share one feature dimension so they can be pretrained on
together. Class vectors are class centroids of a frozen reference encoder.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import networkx as nx
import numpy as np

from tasktree.config.run_config import BenchConfig, EncoderConfig, SynthConfig
from tasktree.errors import ConfigError
from tasktree.graph.core import Graph, disjoint_union
from tasktree.graph.dataset import Dataset, save_dataset
from tasktree.model.encoder import EncoderParams, embed_tasks, init_from_config
from tasktree.tree.task_tree import TaskInstance, relevant_nodes
from tasktree.utils.seeding import STREAM_SPLIT, STREAM_SYNTH, derive_seed, substream

logger = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
MOTIF_NOISE = 0.1


def graph_from_networkx(nx_graph: nx.Graph, features: np.ndarray) -> Graph:
    return Graph.from_edges(nx_graph.number_of_nodes(), list(nx_graph.edges()), features)


def random_splits(num_tasks: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Disjoint 60/20/20 train/val/test split of task indices"""
    order = rng.permutation(num_tasks)
    n_train = int(round(SPLIT_FRACTIONS[0] * num_tasks))
    n_val = int(round(SPLIT_FRACTIONS[1] * num_tasks))
    return {"train": np.sort(order[:n_train]),
            "val": np.sort(order[n_train:n_train + n_val]),
            "test": np.sort(order[n_train + n_val:])}


def make_domain_a(cfg: SynthConfig, seed: int) -> Dataset:
    """SBM communities; node features drawn around per-class means separation * noise_std apart"""
    if cfg.num_classes > cfg.feature_dim:
        raise ConfigError(f"{cfg.num_classes} classes need feature_dim >= {cfg.num_classes}")
    sizes = [cfg.nodes_per_class] * cfg.num_classes
    probs = np.full((cfg.num_classes, cfg.num_classes), cfg.p_out)
    np.fill_diagonal(probs, cfg.p_in)
    nx_graph = nx.stochastic_block_model(sizes, probs.tolist(), seed=derive_seed(seed, STREAM_SYNTH, 0))

    labels = np.repeat(np.arange(cfg.num_classes), cfg.nodes_per_class)
    # orthogonal means: every pair sits separation * noise_std apart
    means = np.eye(cfg.num_classes, cfg.feature_dim) * (cfg.separation * cfg.noise_std / np.sqrt(2.0))
    rng = substream(seed, STREAM_SYNTH, 1)
    features = means[labels] + rng.normal(0.0, cfg.noise_std, size=(labels.shape[0], cfg.feature_dim))

    graph = graph_from_networkx(nx_graph, features)
    tasks = [TaskInstance.node(v, int(labels[v])) for v in range(graph.num_nodes)]
    return Dataset(name="domain_a", graph=graph, tasks=tasks, num_classes=cfg.num_classes,
                   splits=random_splits(len(tasks), substream(seed, STREAM_SPLIT, 0)), metric="accuracy")


def _motif_graph(label: int, size: int) -> nx.Graph:
    # same node count for both classes: 2 * size + 1
    return nx.windmill_graph(size, 3) if label == 0 else nx.star_graph(2 * size)


def make_domain_b(cfg: SynthConfig, seed: int) -> Dataset:
    """Motif graphs: class 0 windmills of triangles, class 1 stars; features are noisy degree one-hots"""
    rng = substream(seed, STREAM_SYNTH, 2)
    labels = rng.permutation(np.repeat([0, 1], cfg.motif_graphs_per_class))
    components = []
    for label in labels:
        motif = _motif_graph(int(label), cfg.motif_size)
        degrees = np.array([d for _, d in sorted(motif.degree())])
        features = np.eye(cfg.feature_dim)[degrees]
        features = features + rng.normal(0.0, MOTIF_NOISE * cfg.noise_std, size=features.shape)
        components.append(graph_from_networkx(motif, features))

    graph = disjoint_union(components)
    tasks = []
    for k, label in enumerate(labels):
        nodes = np.nonzero(graph.graph_id_of_node == k)[0]
        tasks.append(TaskInstance.graph(nodes, int(label), component=k))

    dataset = Dataset(name="domain_b", graph=graph, tasks=tasks, num_classes=2,
                      splits=random_splits(len(tasks), substream(seed, STREAM_SPLIT, 1)), metric="auc")
    stats = motif_statistics(dataset)
    if stats[0]["clustering"] <= stats[1]["clustering"]:
        raise ConfigError("motif classes are not separated by clustering")
    return dataset


def motif_statistics(dataset: Dataset) -> Dict[int, Dict[str, float]]:
    """Mean clustering coefficient and mean degree of the task graphs of each class"""
    nx_graph = nx.from_scipy_sparse_array(dataset.graph.adjacency_matrix)
    per_class: Dict[int, List] = {}
    for task in dataset.tasks:
        nodes = relevant_nodes(task, dataset.graph).tolist()
        sub = nx_graph.subgraph(nodes)
        per_class.setdefault(task.label, []).append(
            (nx.average_clustering(sub), 2.0 * sub.number_of_edges() / len(nodes)))
    return {label: {"clustering": float(np.mean([c for c, _ in values])),
                    "degree": float(np.mean([d for _, d in values]))}
            for label, values in sorted(per_class.items())}


def reference_encoder(feature_dim: int, encoder_cfg: EncoderConfig, seed: int) -> EncoderParams:
    """Frozen encoder whose class centroids serve as class vectors"""
    return init_from_config(feature_dim, encoder_cfg, derive_seed(seed, STREAM_SYNTH, 3))


def class_centroids(params: EncoderParams, dataset: Dataset) -> np.ndarray:
    embeddings = embed_tasks(params, dataset.graph, dataset.tasks)
    labels = dataset.labels
    return np.vstack([embeddings[labels == c].mean(axis=0) for c in range(dataset.num_classes)])


def make_benchmark(cfg: SynthConfig, seed: int, encoder_cfg: Optional[EncoderConfig] = None) -> List[Dataset]:
    """Both domains with class vectors attached"""
    encoder_cfg = encoder_cfg or EncoderConfig()
    datasets = [make_domain_a(cfg, seed), make_domain_b(cfg, seed)]
    reference = reference_encoder(cfg.feature_dim, encoder_cfg, seed)
    for dataset in datasets:
        dataset.class_vectors = class_centroids(reference, dataset)
    return datasets


def synth(cfg: SynthConfig, seed: int, out_dir, encoder_cfg: Optional[EncoderConfig] = None) -> Dict[str, Path]:
    """
    Write the two-domain benchmark as dataset bundles.

    Returns:
        Dict: bundle name -> directory
    """
    paths = {}
    for dataset in make_benchmark(cfg, seed, encoder_cfg):
        path = Path(out_dir) / dataset.name
        save_dataset(dataset, path)
        paths[dataset.name] = path
        logger.info(f"Wrote {dataset.name}: {dataset.graph.num_nodes} nodes, {len(dataset)} tasks -> {path}")
    return paths


def make_bench_graph(cfg: BenchConfig, seed: int) -> Graph:
    """Sparse random graph with Gaussian features for the pipeline benchmark"""
    p = min(1.0, cfg.avg_degree / max(cfg.num_nodes - 1, 1))
    nx_graph = nx.fast_gnp_random_graph(cfg.num_nodes, p, seed=derive_seed(seed, STREAM_SYNTH, 4))
    features = substream(seed, STREAM_SYNTH, 5).normal(size=(cfg.num_nodes, cfg.feature_dim))
    return graph_from_networkx(nx_graph, features)

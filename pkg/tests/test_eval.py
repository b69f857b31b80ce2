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

import dataclasses

import numpy as np
import pytest
from scipy.stats import ortho_group

from tasktree.errors import ConfigError, DimensionError, MetricUndefinedError, SamplingError
from tasktree.evaluation.metrics import accuracy, auc
from tasktree.evaluation.protocols import EvalReport, PrototypeSet, finetune, in_context_eval, zero_shot_eval
from tasktree.graph.core import Graph
from tasktree.graph.dataset import Dataset
from tasktree.model.encoder import embed_tasks, init_params
from tasktree.tree.task_tree import TaskInstance
from tests.conftest import cluster_dataset


def _linear_encoder(dim, seed=0, hidden=8):
    return init_params(dim, hidden, 2, seed=seed, activation="identity", dropout=0.0)


def _noise_dataset(num_classes=5, per_class=40, dim=4, seed=0):
    """Features carry no label information"""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(num_classes), per_class))
    graph = Graph.from_edges(labels.shape[0], np.zeros((0, 2), dtype=np.int64),
                             rng.normal(size=(labels.shape[0], dim)))
    tasks = [TaskInstance.node(v, int(labels[v])) for v in range(labels.shape[0])]
    return Dataset(name="noise", graph=graph, tasks=tasks, num_classes=num_classes)


def _pairwise_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


class TestMetrics:
    def test_accuracy(self):
        assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75

    def test_accuracy_shape(self):
        with pytest.raises(DimensionError):
            accuracy([0, 1], [0, 1, 1])

    def test_auc_extremes(self):
        labels = np.array([0, 0, 1, 1])
        assert auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
        assert auc([0.9, 0.8, 0.2, 0.1], labels) == 0.0
        assert auc([0.5, 0.5, 0.5, 0.5], labels) == 0.5

    def test_auc_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(4, 30))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            scores = np.round(rng.random(n), 1)
            assert auc(scores, labels) == pytest.approx(_pairwise_auc(scores, labels), abs=1e-12)

    def test_auc_monotone_invariance(self):
        rng = np.random.default_rng(1)
        scores, labels = rng.normal(size=50), rng.integers(0, 2, size=50)
        assert auc(np.exp(3 * scores) + 2, labels) == pytest.approx(auc(scores, labels), abs=1e-12)

    def test_auc_single_class(self):
        with pytest.raises(MetricUndefinedError):
            auc([0.1, 0.7, 0.3], [1, 1, 1])


class TestPrototypes:
    def test_rotation_invariance(self):
        rng = np.random.default_rng(2)
        prototypes, queries = rng.normal(size=(4, 6)), rng.normal(size=(30, 6))
        rotation = ortho_group.rvs(6, random_state=3)
        ids = np.array([3, 5, 7, 9])
        plain = PrototypeSet(prototypes, ids).classify(queries)
        rotated = PrototypeSet(prototypes @ rotation, ids).classify(queries @ rotation)
        assert np.array_equal(plain, rotated)

    def test_tie_goes_to_first(self):
        prototypes = PrototypeSet(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([4, 2]))
        assert prototypes.classify(np.zeros((1, 2)))[0] == 4

    def test_bad_distance(self):
        with pytest.raises(ConfigError):
            PrototypeSet(np.eye(2), np.arange(2)).classify(np.eye(2), distance="manhattan")

    def test_report_line(self):
        assert EvalReport("incontext", "accuracy", 0.5, 500, 7).line() == "incontext accuracy 0.500000 500 7"


class TestInContext:
    def test_separated_clusters(self):
        dataset = cluster_dataset(num_classes=6, per_class=10, dim=6)
        report = in_context_eval(_linear_encoder(6), dataset, ways=5, shots=3, num_tasks=50, seed=1)
        assert report.value >= 0.99
        assert (report.protocol, report.num_tasks, report.seed) == ("incontext", 50, 1)

    def test_ways_clamped(self):
        report = in_context_eval(_linear_encoder(4), cluster_dataset(), ways=5, shots=3, num_tasks=20)
        assert report.value >= 0.99

    def test_one_way(self):
        report = in_context_eval(_linear_encoder(4), _noise_dataset(), ways=1, shots=2, num_tasks=20)
        assert report.value == 1.0

    def test_uninformative_features_near_chance(self):
        report = in_context_eval(_linear_encoder(4), _noise_dataset(), ways=5, shots=3, num_tasks=200, seed=4)
        assert abs(report.value - 0.2) <= 0.1

    def test_class_too_small(self):
        dataset = cluster_dataset(per_class=3)
        with pytest.raises(SamplingError) as excinfo:
            in_context_eval(_linear_encoder(4), dataset, shots=3, num_tasks=5)
        assert excinfo.value.class_id == 0

    def test_deterministic(self):
        dataset = _noise_dataset()
        params = _linear_encoder(4, seed=5)
        first = in_context_eval(params, dataset, num_tasks=30, seed=9)
        assert in_context_eval(params, dataset, num_tasks=30, seed=9) == first

    def test_split_restricts_pool(self):
        dataset = cluster_dataset(per_class=20)
        report = in_context_eval(_linear_encoder(4), dataset, ways=3, shots=1, num_tasks=10, split="train")
        assert report.value >= 0.99


class TestZeroShot:
    def test_centroid_vectors(self):
        dataset = cluster_dataset(num_classes=4, per_class=10, dim=5)
        params = _linear_encoder(5, seed=1)
        embeddings = embed_tasks(params, dataset.graph, dataset.tasks)
        centroids = np.vstack([embeddings[dataset.labels == c].mean(axis=0) for c in range(4)])
        report = zero_shot_eval(params, dataset, class_vectors=centroids, num_tasks=10, ways=4)
        assert report.value >= 0.99
        preds = PrototypeSet(centroids, np.arange(4)).classify(embeddings)
        assert report.value == pytest.approx(accuracy(preds, dataset.labels))

    def test_random_orthogonal_vectors_near_chance(self):
        dataset = _noise_dataset()
        vectors = ortho_group.rvs(8, random_state=6)[:5]
        report = zero_shot_eval(_linear_encoder(4, seed=6), dataset, class_vectors=vectors, num_tasks=5, ways=5)
        assert abs(report.value - 0.2) <= 0.1

    def test_dataset_vectors_used_by_default(self):
        dataset = cluster_dataset()
        params = _linear_encoder(4, seed=2)
        embeddings = embed_tasks(params, dataset.graph, dataset.tasks)
        centroids = np.vstack([embeddings[dataset.labels == c].mean(axis=0) for c in range(3)])
        with_vectors = dataclasses.replace(dataset, class_vectors=centroids)
        assert zero_shot_eval(params, with_vectors, num_tasks=3).value == \
            zero_shot_eval(params, dataset, class_vectors=centroids, num_tasks=3).value

    def test_cosine(self):
        dataset = cluster_dataset()
        params = _linear_encoder(4, seed=3)
        embeddings = embed_tasks(params, dataset.graph, dataset.tasks)
        centroids = np.vstack([embeddings[dataset.labels == c].mean(axis=0) for c in range(3)])
        report = zero_shot_eval(params, dataset, class_vectors=centroids, num_tasks=3, distance="cosine")
        assert report.value >= 0.99

    def test_missing_vectors(self):
        with pytest.raises(ConfigError):
            zero_shot_eval(_linear_encoder(4), cluster_dataset(), num_tasks=1)

    def test_width_mismatch(self):
        with pytest.raises(ConfigError):
            zero_shot_eval(_linear_encoder(4), cluster_dataset(), class_vectors=np.zeros((3, 5)), num_tasks=1)


class TestFinetune:
    def test_zero_epochs_predicts_first_class(self):
        dataset = cluster_dataset()
        result = finetune(_linear_encoder(4), dataset, epochs=0, lr=0.01, seed=0)
        assert not result.head.weight.any() and not result.head.bias.any()
        test_labels = dataset.labels[dataset.split_index("test")]
        assert result.report.value == pytest.approx(np.mean(test_labels == 0))
        assert result.best_epoch == 0

    def test_separable_clusters(self):
        dataset = cluster_dataset(per_class=20)
        result = finetune(_linear_encoder(4, seed=1), dataset, epochs=100, lr=0.01, seed=1)
        assert result.report.value >= 0.95
        assert result.report.protocol == "finetune"

    def test_binary_auc(self):
        dataset = cluster_dataset(num_classes=2, per_class=40, metric="auc")
        result = finetune(_linear_encoder(4, seed=2), dataset, epochs=50, lr=0.01, seed=2)
        assert result.report.metric == "auc"
        assert result.report.value >= 0.95

    def test_deterministic(self):
        dataset = cluster_dataset()
        params = init_params(4, 8, 2, seed=3, dropout=0.15)
        first = finetune(params, dataset, epochs=10, lr=0.01, seed=4)
        second = finetune(params, dataset, epochs=10, lr=0.01, seed=4)
        assert first.report == second.report
        assert np.array_equal(first.head.weight, second.head.weight)

    def test_pretrained_untouched(self):
        params = _linear_encoder(4, seed=5)
        before = params.copy()
        finetune(params, cluster_dataset(), epochs=5, lr=0.01, seed=5)
        assert all(np.array_equal(params.tensors()[k], before.tensors()[k]) for k in before.tensors())

    def test_missing_split(self):
        dataset = dataclasses.replace(cluster_dataset(), splits={})
        with pytest.raises(ConfigError):
            finetune(_linear_encoder(4), dataset, epochs=1, lr=0.01, seed=0)

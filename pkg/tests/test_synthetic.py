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

from tasktree.config.run_config import EncoderConfig
from tasktree.data.synthetic import make_benchmark, make_domain_a, make_domain_b, motif_statistics, synth
from tasktree.errors import ConfigError
from tasktree.graph.dataset import load_dataset
from tasktree.tree.task_tree import TaskKind, relevant_nodes


class TestDomainA:
    def test_shape_and_labels(self, tiny_synth):
        dataset = make_domain_a(tiny_synth, 0)
        assert dataset.graph.num_nodes == 40 and dataset.graph.feature_dim == 8
        assert np.bincount(dataset.labels).tolist() == [20, 20]
        assert all(t.kind is TaskKind.NODE for t in dataset.tasks)

    def test_splits_partition_tasks(self, tiny_synth):
        dataset = make_domain_a(tiny_synth, 1)
        sizes = [dataset.split_index(s).size for s in ("train", "val", "test")]
        assert sizes == [24, 8, 8]
        merged = np.concatenate([dataset.split_index(s) for s in ("train", "val", "test")])
        assert np.array_equal(np.sort(merged), np.arange(40))

    def test_class_means_separate(self, tiny_synth):
        dataset = make_domain_a(dataclasses.replace(tiny_synth, nodes_per_class=200), 2)
        x, labels = dataset.graph.features, dataset.labels
        gap = np.linalg.norm(x[labels == 0].mean(axis=0) - x[labels == 1].mean(axis=0))
        assert gap == pytest.approx(tiny_synth.separation, rel=0.1)

    def test_deterministic(self, tiny_synth):
        first, second = make_domain_a(tiny_synth, 3), make_domain_a(tiny_synth, 3)
        assert np.array_equal(first.graph.features, second.graph.features)
        assert np.array_equal(first.graph.indices, second.graph.indices)

    def test_too_many_classes(self, tiny_synth):
        with pytest.raises(ConfigError):
            make_domain_a(dataclasses.replace(tiny_synth, num_classes=9), 0)


class TestDomainB:
    def test_motif_sizes(self, tiny_synth):
        dataset = make_domain_b(tiny_synth, 0)
        assert np.bincount(dataset.labels).tolist() == [10, 10]
        assert dataset.metric == "auc"
        for task in dataset.tasks:
            assert relevant_nodes(task, dataset.graph).size == 2 * tiny_synth.motif_size + 1

    def test_motif_statistics(self, tiny_synth):
        stats = motif_statistics(make_domain_b(tiny_synth, 1))
        s = tiny_synth.motif_size
        assert stats[1]["clustering"] == 0.0
        assert stats[0]["clustering"] > 0.5
        assert stats[0]["degree"] == pytest.approx(6 * s / (2 * s + 1))
        assert stats[1]["degree"] == pytest.approx(4 * s / (2 * s + 1))


class TestBenchmark:
    def test_class_vectors(self, tiny_synth):
        encoder = EncoderConfig(hidden_dim=6, num_layers=2, dropout=0.0)
        domain_a, domain_b = make_benchmark(tiny_synth, 4, encoder)
        assert domain_a.class_vectors.shape == (2, 6)
        assert domain_b.class_vectors.shape == (2, 6)

    def test_synth_bundles_reload(self, tmp_path, tiny_synth, tiny_encoder):
        paths = synth(tiny_synth, 5, tmp_path, tiny_encoder)
        assert sorted(paths) == ["domain_a", "domain_b"]
        expected = make_benchmark(tiny_synth, 5, tiny_encoder)
        for original in expected:
            loaded = load_dataset(paths[original.name])
            assert loaded.metric == original.metric
            assert np.array_equal(loaded.labels, original.labels)
            assert np.array_equal(loaded.graph.features, original.graph.features)
            assert np.array_equal(loaded.class_vectors, original.class_vectors)
            for split in ("train", "val", "test"):
                assert np.array_equal(loaded.split_index(split), original.split_index(split))

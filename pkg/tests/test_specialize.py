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

from tasktree.config.run_config import CorruptionConfig, EncoderConfig, PretrainConfig, SFTConfig, SynthConfig
from tasktree.data.synthetic import make_benchmark
from tasktree.errors import ConfigError, DimensionError, FormatError
from tasktree.evaluation.protocols import zero_shot_eval
from tasktree.model.encoder import embed_tasks, init_from_config, init_params
from tasktree.theory.probes import TaskSample, distribution_gap
from tasktree.train.objectives import sft_loss
from tasktree.train.pretrain import pretrain
from tasktree.train.specialize import InstructionSet, run_sft, specialize
from tasktree.tree.task_tree import TaskInstance
from tests.conftest import cluster_dataset, random_graph


def _with_vectors(dataset, width, seed=0):
    vectors = np.random.default_rng(seed).normal(size=(dataset.num_classes, width))
    return dataclasses.replace(dataset, class_vectors=vectors)


def _same_tensors(a, b):
    return all(np.array_equal(a.tensors()[k], b.tensors()[k]) for k in a.tensors())


class TestSFTLoss:
    def test_instructions_equal_embeddings(self):
        g = random_graph(0, 6, 3)
        params = init_params(3, 4, 2, seed=0)
        tasks = [TaskInstance.node(v, v) for v in range(6)]
        instructions = embed_tasks(params, g, tasks)
        assert sft_loss(params, g, tasks, instructions) == pytest.approx(0.0, abs=1e-20)

    def test_opposite_unit_vectors(self):
        g = random_graph(1, 3, 2)
        params = init_params(2, 2, 1, seed=1).replace_tensors(
            {"projector.W": np.zeros((2, 2)), "projector.b": np.array([1.0, 0.0])})
        loss = sft_loss(params, g, [TaskInstance.node(0, 0)], np.array([[-1.0, 0.0]]))
        assert loss == 4.0

    def test_batch_mean(self):
        g = random_graph(2, 10, 3)
        params = init_params(3, 5, 2, seed=2)
        tasks = [TaskInstance.node(v, v % 3) for v in range(10)]
        instructions = np.random.default_rng(2).normal(size=(3, 5))
        embeddings = embed_tasks(params, g, tasks)
        expected = np.mean([np.sum((embeddings[i] - instructions[t.label]) ** 2) for i, t in enumerate(tasks)])
        assert sft_loss(params, g, tasks, instructions) == pytest.approx(expected, rel=1e-12)

    def test_missing_instruction_row(self):
        g = random_graph(3, 5, 3)
        with pytest.raises(ConfigError):
            sft_loss(init_params(3, 4, 1, seed=3), g, [TaskInstance.node(0, 2)], np.zeros((2, 4)))

    def test_width_mismatch(self):
        g = random_graph(4, 5, 3)
        with pytest.raises(DimensionError):
            sft_loss(init_params(3, 4, 1, seed=4), g, [TaskInstance.node(0, 0)], np.zeros((1, 3)))


class TestInstructionSet:
    def test_from_dataset(self):
        dataset = _with_vectors(cluster_dataset(), 8)
        instructions = InstructionSet.from_dataset(dataset)
        assert instructions.vectors.shape == (3, 8)
        assert instructions.source.endswith("class_vectors.txt")

    def test_dataset_without_vectors(self):
        with pytest.raises(ConfigError):
            InstructionSet.from_dataset(cluster_dataset())

    def test_non_finite(self):
        with pytest.raises(FormatError):
            InstructionSet(np.array([[0.0, np.nan]]))


class TestRunSFT:
    def test_zero_epochs(self, tiny_sft):
        dataset = _with_vectors(cluster_dataset(), 8)
        params = init_params(4, 8, 2, seed=5, dropout=0.0)
        result = run_sft(params, dataset, dataclasses.replace(tiny_sft, epochs=0))
        assert result.losses == []
        assert _same_tensors(result.params, params)

    def test_zero_learning_rate(self, tiny_sft):
        dataset = _with_vectors(cluster_dataset(), 8)
        params = init_params(4, 8, 2, seed=6, dropout=0.0)
        result = run_sft(params, dataset, dataclasses.replace(tiny_sft, learning_rate=0.0))
        assert len(result.losses) == tiny_sft.epochs
        assert _same_tensors(result.params, params)

    def test_pretrained_untouched(self, tiny_sft):
        dataset = _with_vectors(cluster_dataset(), 8)
        params = init_params(4, 8, 2, seed=7, dropout=0.0)
        before = params.copy()
        tuned = specialize(params, dataset, tiny_sft)
        assert _same_tensors(params, before)
        assert not _same_tensors(tuned, before)

    def test_loss_decreases(self):
        dataset = _with_vectors(cluster_dataset(dim=4, separation=3.0), 8)
        params = init_params(4, 8, 2, seed=8, activation="identity", dropout=0.0)
        result = run_sft(params, dataset, SFTConfig(epochs=10, learning_rate=0.01, batch_size=8, seed=8))
        assert result.losses[-1] < result.losses[0]

    def test_deterministic(self, tiny_sft):
        dataset = _with_vectors(cluster_dataset(), 8)
        params = init_params(4, 8, 2, seed=9, dropout=0.0)
        first = run_sft(params, dataset, tiny_sft)
        second = run_sft(params, dataset, tiny_sft)
        assert first.losses == second.losses
        assert _same_tensors(first.params, second.params)

    def test_instruction_width_mismatch(self, tiny_sft):
        dataset = _with_vectors(cluster_dataset(), 5)
        with pytest.raises(ConfigError):
            run_sft(init_params(4, 8, 2, seed=10), dataset, tiny_sft)

    def test_missing_class_row(self, tiny_sft):
        dataset = cluster_dataset()
        with pytest.raises(ConfigError):
            run_sft(init_params(4, 8, 2, seed=11), dataset, tiny_sft, InstructionSet(np.zeros((2, 8))))


@pytest.mark.slow
def test_specialization_improves_zero_shot():
    synth_cfg = SynthConfig(nodes_per_class=20, num_classes=3, feature_dim=8, separation=5.0,
                            p_in=0.3, p_out=0.02, motif_graphs_per_class=10, motif_size=3)
    encoder = EncoderConfig(hidden_dim=8, num_layers=2, dropout=0.0)
    sft_cfg = SFTConfig(epochs=40, learning_rate=0.01, batch_size=16)
    improved = 0
    for seed in range(5):
        domain_a = make_benchmark(synth_cfg, seed, encoder)[0]
        general = init_from_config(synth_cfg.feature_dim, encoder, seed + 100)
        before = zero_shot_eval(general, domain_a, num_tasks=5, ways=3, seed=seed, split="test")
        tuned = specialize(general, domain_a, dataclasses.replace(sft_cfg, seed=seed))
        after = zero_shot_eval(tuned, domain_a, num_tasks=5, ways=3, seed=seed, split="test")
        improved += after.value > before.value
    assert improved >= 4


@pytest.mark.slow
def test_specialization_narrows_domain_gap():
    """General encoder pretrained without the regularizer, then specialized toward domain_a"""
    synth_cfg = SynthConfig(nodes_per_class=100, num_classes=2, feature_dim=16, motif_graphs_per_class=100)
    encoder = EncoderConfig(hidden_dim=16, num_layers=2, dropout=0.15)
    corruption = CorruptionConfig(edge_drop_rate=0.2, feature_mask_rate=0.2)
    improved = narrowed = 0
    for seed in range(5):
        target, other = make_benchmark(synth_cfg, seed, encoder)
        pretrain_cfg = PretrainConfig(epochs=30, batch_size=128, learning_rate=0.005, weight_decay=1e-8, lam=0.0,
                                      fanout=10, seed=seed)
        general = pretrain([target, other], pretrain_cfg, corruption, encoder).params
        tuned = specialize(general, target, SFTConfig(epochs=60, learning_rate=0.01, batch_size=64, seed=seed))

        data_p, data_t = TaskSample(other.graph, other.tasks), TaskSample(target.graph, target.tasks)
        zero_shot = [zero_shot_eval(p, target, num_tasks=50, ways=2, seed=seed, split="test").value
                     for p in (general, tuned)]
        gaps = [distribution_gap(p, data_p, data_t).gap for p in (general, tuned)]
        improved += zero_shot[1] > zero_shot[0]
        narrowed += gaps[1] < gaps[0]
    assert improved >= 4
    assert narrowed >= 4

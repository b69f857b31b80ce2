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

from tasktree.config.run_config import CorruptionConfig, EncoderConfig
from tasktree.errors import CheckpointError, ConfigError, DimensionError, NumericError
from tasktree.graph.core import Graph, disjoint_union
from tasktree.model import (LinearHead, backward, forward, head_g, init_from_config, init_params, load_checkpoint,
                            param_norms, project, save_checkpoint)
from tasktree.model.encoder import LossTerms, embed_tasks
from tasktree.model.tape import NORM_EPS, Tape
from tasktree.train.objectives import CrossEntropyObjective, RegularizerObjective, SFTObjective, domain_regularizer
from tasktree.train.pretrain import ViewPair, batch_loss_and_gradients, corrupt
from tasktree.tree.task_tree import TaskInstance
from tests.conftest import random_graph

FD_STEP = 1e-5


def _tasks(g: Graph):
    return [TaskInstance.node(0, 0), TaskInstance.node(3, 1), TaskInstance.edge(1, 5, 2),
            TaskInstance.graph([2, 4, 6, 7], 1), TaskInstance.node(6, 2)]


def _relu(x):
    return np.maximum(x, 0.0)


def _unit_rows(z):
    return z / (np.linalg.norm(z, axis=1, keepdims=True) + NORM_EPS)


def _view_embeddings(params, views):
    z_hat = np.vstack([embed_tasks(params, v.g_hat, v.tasks) for v in views])
    z_tilde = np.vstack([embed_tasks(params, v.g_tilde, v.tasks) for v in views])
    return z_hat, z_tilde


def _fixed_target_loss(params, views, lam, targets):
    """Pretraining loss with the reconstruction targets held constant"""
    z_hat, z_tilde = _view_embeddings(params, views)
    target_hat, target_tilde = targets
    n = z_hat.shape[0]
    recon = (np.sum((_unit_rows(head_g(params, z_hat)) - target_tilde) ** 2)
             + np.sum((_unit_rows(head_g(params, z_tilde)) - target_hat) ** 2)) / (2 * n)
    return recon + lam * domain_regularizer(np.vstack([z_hat, z_tilde]))


def _check_gradients(loss_of, tensors, grads):
    """Central differences over every entry of every tensor"""
    for name, value in tensors.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = []
            for sign in (1.0, -1.0):
                moved = np.array(value, copy=True)
                moved[idx] += sign * FD_STEP
                shifted.append(loss_of({name: moved}))
            numeric[idx] = (shifted[0] - shifted[1]) / (2 * FD_STEP)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-6, err_msg=name)


class TestInit:
    def test_full_scale_defaults(self):
        cfg = EncoderConfig()
        assert (cfg.num_layers, cfg.hidden_dim, cfg.dropout) == (2, 768, 0.15)

    def test_seed_determinism(self):
        a, b = init_params(5, 8, 2, seed=11), init_params(5, 8, 2, seed=11)
        for name, tensor in a.tensors().items():
            assert np.array_equal(tensor, b.tensors()[name])
        c = init_params(5, 8, 2, seed=12)
        assert not np.array_equal(a.layer(0)[0], c.layer(0)[0])

    def test_desk_override(self):
        params = init_from_config(4, EncoderConfig(hidden_dim=16, num_layers=2), seed=0)
        assert params.hidden_dim == 16 and params.num_layers == 2 and params.input_dim == 4

    def test_tied_needs_square(self):
        with pytest.raises(ConfigError):
            init_params(3, 4, 2, seed=0, tied_weights=True)

    def test_glorot_range(self):
        params = init_params(6, 10, 1, seed=0)
        bound = np.sqrt(6.0 / 16)
        assert np.all(np.abs(params.layer(0)[0]) <= bound)
        assert not params.projector_bias.any()


class TestForward:
    @staticmethod
    def _identity_params(dim, layers=1):
        params = init_params(dim, dim, layers, seed=0, dropout=0.0)
        return params.replace_tensors({name: np.eye(dim) for name in params.tensors() if name.startswith("layer")})

    def test_isolated_node(self):
        g = Graph.from_edges(1, [], np.array([[2.0, -3.0]]))
        assert np.array_equal(forward(self._identity_params(2), g), [[2.0, 0.0]])

    def test_single_edge(self):
        g = Graph.from_edges(2, [(0, 1)], np.eye(2))
        assert np.array_equal(forward(self._identity_params(2), g), [[1.0, 1.0], [1.0, 1.0]])

    @pytest.mark.parametrize("tree_form", [False, True])
    def test_computation_tree_recursion(self, tree_form):
        g = random_graph(7, 9, 4)
        params = init_params(4, 4, 3, seed=7, dropout=0.0)

        def embed(node, depth):
            if depth == 0:
                return np.zeros(4) if tree_form else g.features[node]
            w1, w2 = params.layer(depth - 1)
            neighbors = g.neighbors(node)
            agg = (sum(embed(int(j), depth - 1) for j in neighbors) / neighbors.size
                   if neighbors.size else np.zeros(4))
            self_in = g.features[node] if tree_form else embed(node, depth - 1)
            return _relu(w1 @ self_in + w2 @ agg)

        out = forward(params, g, tree_form=tree_form)
        for node in range(g.num_nodes):
            np.testing.assert_allclose(out[node], embed(node, 3), rtol=0, atol=1e-10)

    def test_tree_form_one_layer_is_root(self):
        g = random_graph(1, 6, 3)
        params = init_params(3, 3, 1, seed=1, dropout=0.0)
        w1, _ = params.layer(0)
        np.testing.assert_allclose(forward(params, g, tree_form=True), _relu(g.features @ w1.T), atol=1e-14)

    def test_eval_is_pure(self):
        g = random_graph(2, 10, 3)
        params = init_params(3, 5, 2, seed=2)
        assert np.array_equal(forward(params, g), forward(params, g))

    def test_disjoint_union_locality(self):
        a, b = random_graph(3, 6, 3), random_graph(4, 5, 3)
        params = init_params(3, 5, 2, seed=3)
        union = forward(params, disjoint_union([a, b]))
        np.testing.assert_allclose(union[:6], forward(params, a), rtol=0, atol=1e-12)
        np.testing.assert_allclose(union[6:], forward(params, b), rtol=0, atol=1e-12)

    def test_identity_activation_is_linear(self):
        g = random_graph(5, 8, 3)
        params = init_params(3, 4, 2, seed=5, activation="identity", dropout=0.0)
        scaled = g.with_features(2.5 * g.features)
        np.testing.assert_allclose(forward(params, scaled), 2.5 * forward(params, g), rtol=1e-12, atol=1e-12)

    def test_train_mode_dropout(self):
        g = random_graph(6, 10, 3)
        params = init_params(3, 8, 2, seed=6, dropout=0.5)
        with pytest.raises(ConfigError):
            forward(params, g, mode="train")
        first = forward(params, g, mode="train", rng=np.random.default_rng(1))
        again = forward(params, g, mode="train", rng=np.random.default_rng(1))
        assert np.array_equal(first, again)
        assert not np.array_equal(first, forward(params, g))

    def test_feature_dim_mismatch(self):
        with pytest.raises(ConfigError):
            forward(init_params(4, 4, 1, seed=0), random_graph(0, 5, 3))

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            forward(init_params(3, 4, 1, seed=0), random_graph(0, 5, 3), mode="infer")


class TestHeads:
    def test_projector(self):
        params = init_params(3, 4, 1, seed=0)
        z = np.random.default_rng(0).normal(size=(6, 4))
        identity = params.replace_tensors({"projector.W": np.eye(4)})
        assert np.array_equal(project(identity, z), z)
        zero = params.replace_tensors({"projector.W": np.zeros((4, 4))})
        assert not project(zero, z).any()
        expected = np.array([[sum(params.projector_weight[o, i] * row[i] for i in range(4)) for o in range(4)]
                             for row in z])
        np.testing.assert_allclose(project(params, z), expected, rtol=0, atol=1e-12)

    def test_predictor_head(self):
        params = init_params(3, 4, 1, seed=1, head_activation="identity")
        z = np.random.default_rng(1).normal(size=(5, 4))
        identity = params.replace_tensors({"head.W1": np.eye(4), "head.W2": np.eye(4)})
        assert np.array_equal(head_g(identity, z), z)
        zero = params.replace_tensors({"head.W2": np.zeros((4, 4))})
        assert not head_g(zero, z).any()

        relu = init_params(3, 4, 1, seed=1)
        w1, w2 = relu.head_weights
        np.testing.assert_allclose(head_g(relu, z), _relu(z @ w1.T) @ w2.T, rtol=0, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            project(init_params(3, 4, 1, seed=0), np.ones((2, 3)))


@pytest.mark.parametrize("activation", ["identity", "relu"])
class TestGradients:
    @staticmethod
    def _setup(activation, seed=0):
        g = random_graph(seed, 8, 3, p=0.4)
        params = init_params(3, 4, 2, seed=seed, activation=activation, head_activation=activation, dropout=0.0)
        # nonzero biases keep projected rows away from the origin, where normalization has a kink
        rng = np.random.default_rng(100 + seed)
        params = params.replace_tensors({name: rng.normal(size=4) for name in ("projector.b", "head.b1", "head.b2")})
        return g, params

    def test_sft(self, activation):
        g, params = self._setup(activation)
        tasks = _tasks(g)
        objective = SFTObjective(np.random.default_rng(0).normal(size=(3, 4)), [t.label for t in tasks])
        _, grads = backward(params, g, tasks, objective)
        _check_gradients(lambda c: backward(params.replace_tensors(c), g, tasks, objective)[0],
                         params.tensors(), grads)

    def test_regularizer(self, activation):
        g, params = self._setup(activation, seed=1)
        tasks = _tasks(g)
        _, grads = backward(params, g, tasks, RegularizerObjective())
        _check_gradients(lambda c: backward(params.replace_tensors(c), g, tasks, RegularizerObjective())[0],
                         params.tensors(), grads)

    def test_cross_entropy_head(self, activation):
        g, params = self._setup(activation, seed=2)
        tasks = _tasks(g)
        rng = np.random.default_rng(2)
        head = LinearHead(rng.normal(size=(3, 4)), rng.normal(size=3)).tensors()
        objective = CrossEntropyObjective([t.label for t in tasks])
        _, grads = backward(params, g, tasks, objective, extra=head)

        def loss_of(change):
            return backward(params.replace_tensors(change), g, tasks, objective,
                            extra={**head, **{k: v for k, v in change.items() if k in head}})[0]

        _check_gradients(loss_of, {**params.tensors(), **head}, grads)

    @pytest.mark.parametrize("lam", [0.0, 10.0])
    def test_reconstruction(self, activation, lam):
        g, params = self._setup(activation, seed=3)
        other = random_graph(13, 6, 3, p=0.5)
        cfg = CorruptionConfig(edge_drop_rate=0.3, feature_mask_rate=0.2)
        views = [ViewPair(corrupt(g, cfg, np.random.default_rng(1)), corrupt(g, cfg, np.random.default_rng(2)),
                          _tasks(g)),
                 ViewPair(corrupt(other, cfg, np.random.default_rng(3)), corrupt(other, cfg, np.random.default_rng(4)),
                          [TaskInstance.node(1, 0), TaskInstance.graph([0, 2, 5], 1)])]
        breakdown, grads = batch_loss_and_gradients(params, views, lam)

        # stop-gradient targets stay at their base-point values while the params move
        z_hat, z_tilde = _view_embeddings(params, views)
        targets = (_unit_rows(z_hat), _unit_rows(z_tilde))
        assert _fixed_target_loss(params, views, lam, targets) == pytest.approx(breakdown.total, rel=1e-9)
        _check_gradients(lambda c: _fixed_target_loss(params.replace_tensors(c), views, lam, targets),
                         params.tensors(), grads)


class TestStopGradient:
    def test_target_branch_gets_no_gradient(self):
        tape = Tape()
        target_w = tape.leaf(np.array([[2.0, -1.0], [0.5, 1.0]]), name="target")
        online_w = tape.leaf(np.eye(2), name="online")
        x = tape.constant(np.array([[1.0, 2.0], [3.0, -1.0]]))
        target = tape.stop_gradient(tape.linear(x, target_w))
        loss = tape.sq_distance(tape.linear(x, online_w), target, 1.0)
        tape.backward(loss)
        assert target_w.grad is None
        assert online_w.grad is not None and online_w.grad.any()

    def test_target_branch_still_moves_value(self):
        x = np.array([[1.0, 2.0]])

        def loss_for(target_weight):
            tape = Tape()
            target = tape.stop_gradient(tape.linear(tape.constant(x), tape.leaf(target_weight)))
            return float(tape.sq_distance(tape.constant(x), target, 1.0).value)

        assert loss_for(np.eye(2)) == 0.0
        assert loss_for(2.0 * np.eye(2)) > 0.0

    def test_dead_units(self):
        g = random_graph(0, 6, 3)
        params = init_params(3, 4, 2, seed=0, dropout=0.0)
        params = params.replace_tensors({name: np.zeros_like(t) for name, t in params.tensors().items()})
        tasks = [TaskInstance.node(v, v % 2) for v in range(6)]
        _, grads = backward(params, g, tasks, SFTObjective(np.ones((2, 4)), [t.label for t in tasks]))
        for name in ("layer0.W1", "layer0.W2", "layer1.W1", "layer1.W2", "projector.W"):
            assert not grads[name].any()
        assert grads["projector.b"].any()


class TestNumerics:
    def test_non_finite_term_is_named(self):
        tape = Tape()
        bad = tape.leaf(np.asarray(np.nan))
        terms = LossTerms(total=bad, parts={"recon": bad})
        with pytest.raises(NumericError) as excinfo:
            terms.check_finite()
        assert excinfo.value.term == "recon"

    def test_param_norms(self):
        params = init_params(2, 2, 1, seed=0)
        identity = params.replace_tensors({"layer0.W1": np.eye(2), "layer0.W2": np.diag([3.0, 1.0])})
        assert param_norms(identity) == pytest.approx((1.0, 3.0))

    def test_param_norms_power_iteration(self):
        params = init_params(8, 8, 1, seed=4)
        w1 = params.layer(0)[0]
        v = np.ones(8)
        for _ in range(2000):
            v = w1.T @ (w1 @ v)
            v /= np.linalg.norm(v)
        assert param_norms(params)[0] == pytest.approx(np.linalg.norm(w1 @ v), abs=1e-6)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params(4, 4, 3, seed=9, activation="identity", tied_weights=True, dropout=0.0)
        head = LinearHead(np.arange(8.0).reshape(2, 4), np.array([0.5, -0.5]))
        save_checkpoint(tmp_path / "m.ckpt", params, head)
        loaded, loaded_head = load_checkpoint(tmp_path / "m.ckpt", expected_input_dim=4)
        assert loaded.tied_weights and loaded.activation == "identity" and loaded.num_layers == 3
        for name, tensor in params.tensors().items():
            assert np.array_equal(loaded.tensors()[name], tensor)
        assert np.array_equal(loaded_head.weight, head.weight)
        assert np.array_equal(loaded_head.bias, head.bias)

    def test_without_head(self, tmp_path):
        params = init_params(3, 5, 2, seed=1)
        save_checkpoint(tmp_path / "m.ckpt", params)
        loaded, head = load_checkpoint(tmp_path / "m.ckpt")
        assert head is None and loaded.dropout_rate == params.dropout_rate

    def test_corrupted_files(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(3, 5, 2, seed=1))
        data = path.read_bytes()

        path.write_bytes(data[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
        path.write_bytes(data + b"\0" * 8)
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)
        path.write_bytes(b"NOTACKPT" + data[8:])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        path.write_bytes(data[:8] + (2).to_bytes(4, "little") + data[12:])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_input_dim_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", init_params(3, 5, 2, seed=1))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.ckpt", expected_input_dim=7)

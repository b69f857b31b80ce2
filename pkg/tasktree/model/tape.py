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
Minimal reverse-mode tape over the operator set the encoder and its losses use.

Every operation appends a Var to the tape in creation order; backward walks
the list in reverse and calls each node's vector-Jacobian product. Values
are plain numpy arrays, sparse operators are constants.

    tape = Tape()
    w = tape.leaf(W, name="w")
    loss = tape.sq_distance(tape.linear(tape.constant(x), w), tape.constant(y), scale=1.0)
    tape.backward(loss)
    w.grad
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

NORM_EPS = 1e-12


class Var:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "name")

    def __init__(self, value, parents: Tuple['Var', ...] = (), vjp: Optional[Callable] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    def __init__(self, enabled: bool = True):
        # a disabled tape evaluates values only
        self.enabled = enabled
        self.nodes: List[Var] = []

    # -- recording ---------------------------------------------------------

    def leaf(self, value, name: Optional[str] = None) -> Var:
        var = Var(np.asarray(value, dtype=np.float64), requires_grad=self.enabled, name=name)
        self.nodes.append(var)
        return var

    def constant(self, value) -> Var:
        return Var(value)

    def _record(self, value, parents: Sequence[Var], vjp: Callable) -> Var:
        if not (self.enabled and any(p.requires_grad for p in parents)):
            return Var(value)
        var = Var(value, tuple(parents), vjp, requires_grad=True)
        self.nodes.append(var)
        return var

    def backward(self, loss: Var):
        """Accumulate d loss / d var into .grad of every var that requires it"""
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.value, dtype=np.float64)
        for var in reversed(self.nodes):
            if var.grad is None or var.vjp is None:
                continue
            for parent, grad in zip(var.parents, var.vjp(var.grad)):
                if grad is None or not parent.requires_grad:
                    continue
                parent.grad = grad if parent.grad is None else parent.grad + grad

    # -- linear algebra ----------------------------------------------------

    def linear(self, x: Var, weight: Var, bias: Optional[Var] = None) -> Var:
        """x @ W.T (+ b) with W stored as out x in"""
        out = x.value @ weight.value.T
        if bias is not None:
            out = out + bias.value
        xv, wv = x.value, weight.value

        def vjp(g):
            grads = [g @ wv, g.T @ xv]
            if bias is not None:
                grads.append(g.sum(axis=0))
            return grads

        parents = (x, weight) if bias is None else (x, weight, bias)
        return self._record(out, parents, vjp)

    def spmm(self, operator, x: Var) -> Var:
        """Constant (sparse or dense) operator applied from the left"""
        return self._record(operator @ x.value, (x,), lambda g: [operator.T @ g])

    def add(self, a: Var, b: Var) -> Var:
        return self._record(a.value + b.value, (a, b), lambda g: [g, g])

    def scale(self, a: Var, factor) -> Var:
        """Elementwise product with a constant (scalar or same-shape mask)"""
        return self._record(a.value * factor, (a,), lambda g: [g * factor])

    def vstack(self, parts: Sequence[Var]) -> Var:
        sizes = np.cumsum([p.value.shape[0] for p in parts])[:-1]
        return self._record(np.vstack([p.value for p in parts]), tuple(parts),
                            lambda g: np.split(g, sizes, axis=0))

    def stop_gradient(self, a: Var) -> Var:
        return Var(np.array(a.value, copy=True))

    # -- nonlinearities ----------------------------------------------------

    def relu(self, a: Var) -> Var:
        mask = a.value > 0
        return self._record(np.where(mask, a.value, 0.0), (a,), lambda g: [g * mask])

    def activation(self, a: Var, name: str) -> Var:
        if name == "relu":
            return self.relu(a)
        if name == "identity":
            return a
        raise ValueError(f"unsupported activation {name!r}")

    def normalize_rows(self, a: Var, eps: float = NORM_EPS) -> Var:
        """rho(z) = z / (||z|| + eps), row by row"""
        z = a.value
        norm = np.linalg.norm(z, axis=1, keepdims=True)
        out = z / (norm + eps)

        def vjp(g):
            dot = np.sum(g * z, axis=1, keepdims=True)
            coeff = np.divide(dot, norm * (norm + eps) ** 2, out=np.zeros_like(norm), where=norm > 0)
            return [g / (norm + eps) - z * coeff]

        return self._record(out, (a,), vjp)

    # -- scalar losses -----------------------------------------------------

    def sq_distance(self, a: Var, b: Var, scale: float) -> Var:
        """scale * sum_i ||a_i - b_i||^2"""
        diff = a.value - b.value
        out = np.asarray(scale * np.sum(diff * diff))
        return self._record(out, (a, b), lambda g: [2.0 * scale * g * diff, -2.0 * scale * g * diff])

    def softmax_kl_to_mean(self, a: Var) -> Var:
        """
        (1/B) sum_i KL(H || Z_i) with H = softmax(mean row), Z_i = softmax(row i).

        Returns:
            Var: scalar, non-negative
        """
        z = a.value
        batch = z.shape[0]
        log_h = log_softmax(z.mean(axis=0))
        log_z = log_softmax(z, axis=1)
        h = np.exp(log_h)
        mean_log_z = log_z.mean(axis=0)
        out = np.asarray(np.dot(h, log_h - mean_log_z))

        def vjp(g):
            direct = (np.exp(log_z) - h) / batch
            g_h = log_h - mean_log_z + 1.0
            g_mean = h * (g_h - np.dot(g_h, h))
            return [g * (direct + g_mean / batch)]

        return self._record(out, (a,), vjp)

    def softmax_cross_entropy(self, logits: Var, labels: np.ndarray) -> Var:
        """Mean negative log-likelihood of integer labels"""
        labels = np.asarray(labels, dtype=np.int64)
        n = logits.value.shape[0]
        log_p = log_softmax(logits.value, axis=1)
        out = np.asarray(-log_p[np.arange(n), labels].mean())

        def vjp(g):
            grad = softmax(logits.value, axis=1)
            grad[np.arange(n), labels] -= 1.0
            return [g * grad / n]

        return self._record(out, (logits,), vjp)

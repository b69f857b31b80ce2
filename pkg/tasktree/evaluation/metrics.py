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
from scipy.stats import rankdata

from tasktree.errors import DimensionError, MetricUndefinedError


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise DimensionError(f"preds {preds.shape} and labels {labels.shape} differ")
    if labels.size == 0:
        raise MetricUndefinedError("accuracy of an empty prediction set")
    return float(np.mean(preds == labels))


def auc(scores, labels) -> float:
    """
    ROC AUC as the Mann-Whitney rank statistic; ties share their midrank.

    Raises:
        MetricUndefinedError: labels hold a single class
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} differ")
    num_pos = int(labels.sum())
    num_neg = labels.size - num_pos
    if num_pos == 0 or num_neg == 0:
        raise MetricUndefinedError("auc needs both positive and negative labels")

    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels].sum() - num_pos * (num_pos + 1) / 2.0
    return float(u_statistic / (num_pos * num_neg))

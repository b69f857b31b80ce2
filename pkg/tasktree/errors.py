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

"""Exception hierarchy shared by every tasktree module.

The CLI maps these onto exit codes: numeric failures exit 2, usage
errors exit 64, everything else exits 1.
"""

from typing import Optional


class TaskTreeError(Exception):
    """Base class for all tasktree errors"""


class GraphLoadError(TaskTreeError):
    """Edge or feature file cannot be turned into a graph"""


class FormatError(TaskTreeError):
    """Ragged, non-numeric or non-finite text rows"""


class DimensionError(TaskTreeError):
    """Incompatible matrix or feature dimensions"""


class ConfigError(TaskTreeError):
    """Invalid configuration value or missing required input"""


class MalformedTaskError(TaskTreeError):
    """Task instance with an empty or invalid relevant-node set"""


class SamplingError(TaskTreeError):
    """Episode sampling impossible for the requested ways/shots"""

    def __init__(self, message: str, class_id: Optional[int] = None):
        super().__init__(message)
        self.class_id = class_id


class MetricUndefinedError(TaskTreeError):
    """Metric is undefined for the given labels"""


class ContractError(TaskTreeError):
    """Inputs violate the assumptions of a theory check"""


class CheckpointError(TaskTreeError):
    """Checkpoint file is truncated or incompatible"""


class NumericError(TaskTreeError):
    """Non-finite loss term or gradient"""

    def __init__(self, message: str, term: Optional[str] = None):
        super().__init__(message)
        self.term = term


class UsageError(TaskTreeError):
    """Bad command-line usage (unknown flag, missing file, missing seed)"""


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 64


def exit_code_for(error: BaseException) -> int:
    """Map an exception raised by a pipeline onto the CLI exit code"""
    if isinstance(error, UsageError):
        return EXIT_USAGE
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    return EXIT_VALIDATION

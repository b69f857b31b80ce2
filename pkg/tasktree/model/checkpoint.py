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
Binary checkpoint format.

    magic   b"TTREECKP"
    header  little-endian: version u32, num_layers u32, input_dim u32,
            hidden_dim u32, flags u32, head_classes u32, dropout f64
    blobs   row-major little-endian float64 tensors in EncoderParams.tensors()
            order, then the linear head (when head_classes > 0)

flags: bit 0 tied weights, bit 1 identity activation, bit 2 identity head activation.
"""

import logging
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from tasktree.errors import CheckpointError, TaskTreeError
from tasktree.model.encoder import EncoderParams, init_params
from tasktree.model.heads import LinearHead

logger = logging.getLogger(__name__)

MAGIC = b"TTREECKP"
VERSION = 1
_HEADER = struct.Struct("<6Id")

FLAG_TIED = 1
FLAG_IDENTITY = 2
FLAG_HEAD_IDENTITY = 4


def save_checkpoint(path, params: EncoderParams, head: Optional[LinearHead] = None):
    flags = ((FLAG_TIED if params.tied_weights else 0)
             | (FLAG_IDENTITY if params.activation == "identity" else 0)
             | (FLAG_HEAD_IDENTITY if params.head_activation == "identity" else 0))
    head_classes = 0 if head is None else head.num_classes

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, params.num_layers, params.input_dim, params.hidden_dim,
                             flags, head_classes, float(params.dropout_rate)))
        for tensor in params.tensors().values():
            f.write(np.ascontiguousarray(tensor, dtype='<f8').tobytes())
        if head is not None:
            for tensor in head.tensors().values():
                f.write(np.ascontiguousarray(tensor, dtype='<f8').tobytes())
    logger.info(f"Checkpoint saved to {path}")


def load_checkpoint(path, expected_input_dim: Optional[int] = None) -> Tuple[EncoderParams, Optional[LinearHead]]:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: bad magic, unsupported version, truncated blobs, or
            an input dim different from expected_input_dim
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + _HEADER.size:
        raise CheckpointError(f"{path} is not a tasktree checkpoint")
    version, num_layers, input_dim, hidden_dim, flags, head_classes, dropout = \
        _HEADER.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    if expected_input_dim is not None and input_dim != expected_input_dim:
        raise CheckpointError(f"{path}: checkpoint input dim {input_dim} does not match data dim {expected_input_dim}")

    # shapes come from a template with the same architecture
    try:
        template = init_params(input_dim, hidden_dim, num_layers, seed=0,
                               activation="identity" if flags & FLAG_IDENTITY else "relu",
                               head_activation="identity" if flags & FLAG_HEAD_IDENTITY else "relu",
                               tied_weights=bool(flags & FLAG_TIED), dropout=dropout)
    except TaskTreeError as e:
        raise CheckpointError(f"{path}: inconsistent header: {e}") from e
    shapes = {name: t.shape for name, t in template.tensors().items()}
    if head_classes:
        shapes.update({name: t.shape for name, t in LinearHead.zeros(head_classes, hidden_dim).tensors().items()})

    offset = len(MAGIC) + _HEADER.size
    tensors = {}
    for name, shape in shapes.items():
        size = int(np.prod(shape)) * 8
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated while reading {name}")
        tensors[name] = np.frombuffer(data, dtype='<f8', count=size // 8, offset=offset).astype(np.float64).reshape(shape)
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")

    params = template.replace_tensors(tensors)
    head = LinearHead.from_tensors(tensors) if head_classes else None
    logger.info(f"Checkpoint loaded from {path}")
    return params, head

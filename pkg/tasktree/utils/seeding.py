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
Named random sub-streams.

All randomness flows from one root seed. Each component asks for its own
stream by name (and optionally an index such as an epoch or episode), so
re-seeding one component never shifts the draws of another.

    rng = substream(7, "episodes", 12)   # episode 12 of run seed 7
"""

import zlib

import numpy as np

STREAM_INIT = "init"
STREAM_CORRUPTION = "corruption"
STREAM_SAMPLING = "sampling"
STREAM_EPISODES = "episodes"
STREAM_SPLIT = "split"
STREAM_SYNTH = "synth"
STREAM_HEAD = "head"
STREAM_TRIALS = "trials"
STREAM_BATCHES = "batches"


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return an independent PCG64 generator for (seed, name, *index)"""
    entropy = [int(seed) & 0xFFFFFFFF, _name_key(name)] + [int(i) & 0xFFFFFFFF for i in index]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, name: str, *index: int) -> int:
    """Integer seed for libraries that take ints (networkx, init_params)"""
    return int(substream(seed, name, *index).integers(0, 2**31 - 1))

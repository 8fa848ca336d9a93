"""Deterministic chunked execution of Monte Carlo simulators.

Paths are split into fixed-size chunks; chunk ``c`` always draws from the
random stream keyed by (seed, stream, c), so results are bit-identical for
any worker count.  Workers receive the simulator once via the pool
initializer and are then driven purely by chunk indices.
"""

from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context

import numpy as np

#: sub-stream identifiers; Gaussian draws and modulator draws never share one
STREAM_GAUSSIAN = 0
STREAM_MODULATOR = 1

_WORKER_SIM = None


def chunk_rng(seed: int, stream: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, chunk)))


def chunk_counts(paths: int, chunk_size: int):
    """Sizes of the consecutive chunks covering ``paths``."""
    full, rem = divmod(paths, chunk_size)
    return [chunk_size] * full + ([rem] if rem else [])


def _init_worker(sim):
    global _WORKER_SIM
    _WORKER_SIM = sim


def _run_chunk(args):
    chunk_idx, count = args
    return _WORKER_SIM.simulate_chunk(chunk_idx, count)


def run_chunks(sim, paths: int, chunk_size: int, workers: int = 1):
    """Run ``sim.simulate_chunk(idx, count)`` over all chunks, in order."""
    counts = chunk_counts(paths, chunk_size)
    tasks = list(enumerate(counts))
    if workers <= 1 or len(tasks) == 1:
        return [sim.simulate_chunk(i, c) for i, c in tasks]
    with ProcessPoolExecutor(
            max_workers=min(workers, len(tasks)),
            mp_context=get_context("fork"),
            initializer=_init_worker, initargs=(sim,)) as pool:
        return list(pool.map(_run_chunk, tasks))

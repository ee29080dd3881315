"""
Kinetic Atlas Worker Orchestrator
=================================
Runs independent Monte-Carlo realisations on a process pool.

Key Principles:
- Results come back in task order, whatever the pool size
- threads == 1 stays in-process (no pool, no pickling)
- Pool size defaults to the physical core count

Every task carries its own RNG substream, so the worker count never
changes a result.
"""

import logging
import multiprocessing
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import psutil
from tqdm import tqdm

from .errors import ConfigurationError


class PoolState(Enum):
    IDLE = "idle"
    BUSY = "busy"


@dataclass
class BatchRecord:
    """Bookkeeping of the last batch run by the orchestrator."""
    tasks: int
    workers: int
    seconds: float


def default_workers() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


class WorkerOrchestrator:
    """
    Ordered map over a process pool.

    Tasks are dispatched in chunks; map preserves order, so accumulating
    the results in the parent is deterministic.
    """

    # Tasks below this count are not worth a pool
    MIN_PARALLEL_TASKS = 4

    def __init__(self, threads: Optional[int] = None):
        if threads is not None and threads < 1:
            raise ConfigurationError(f"--threads must be at least 1, got {threads}")
        self.threads = threads or default_workers()
        self.state = PoolState.IDLE
        self.last_batch: Optional[BatchRecord] = None

    def map_ordered(self, func: Callable[[Any], Any], tasks: Sequence[Any],
                    progress: bool = False, desc: str = "realisations") -> List[Any]:
        tasks = list(tasks)
        workers = min(self.threads, len(tasks))
        self.state = PoolState.BUSY
        start = time.time()
        try:
            if workers <= 1 or len(tasks) < self.MIN_PARALLEL_TASKS:
                workers = 1
                results = [func(task) for task in tqdm(tasks, desc=desc, disable=not progress)]
            else:
                chunksize = max(1, len(tasks) // (workers * 4))
                with multiprocessing.get_context().Pool(processes=workers) as pool:
                    results = list(tqdm(pool.imap(func, tasks, chunksize=chunksize),
                                        total=len(tasks), desc=desc, disable=not progress))
        finally:
            self.state = PoolState.IDLE
        self.last_batch = BatchRecord(tasks=len(tasks), workers=workers, seconds=time.time() - start)
        logging.debug(f"Batch of {len(tasks)} tasks on {workers} workers in {self.last_batch.seconds:.2f}s")
        return results

    def get_status(self) -> Dict[str, Any]:
        status: Dict[str, Any] = {
            "state": self.state.value,
            "threads": self.threads,
            "cpu_percent": psutil.cpu_percent(interval=None),
        }
        if self.last_batch is not None:
            status["last_batch"] = {
                "tasks": self.last_batch.tasks,
                "workers": self.last_batch.workers,
                "seconds": round(self.last_batch.seconds, 3),
            }
        return status

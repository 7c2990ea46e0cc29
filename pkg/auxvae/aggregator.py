"""Bounded concurrent fan-out of fold jobs and equal-weight aggregation of their metrics."""

import asyncio
import logging
from dataclasses import dataclass
from typing import Callable, Generic, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class JobOutcome(Generic[T]):
    key: str
    result: Optional[T] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class MetricSummary(BaseModel):
    mean: float
    std: float
    count: int


async def fanout(jobs: Sequence[Tuple[str, Callable[[], T]]], max_workers: int = 1) -> List[JobOutcome[T]]:
    """Run blocking jobs on worker threads, at most ``max_workers`` at a time.

    A failing job is logged and recorded; its siblings keep running. Outcomes
    come back in job order.
    """
    gate = asyncio.Semaphore(max_workers)

    async def run_one(key: str, job: Callable[[], T]) -> JobOutcome[T]:
        async with gate:
            try:
                return JobOutcome(key=key, result=await asyncio.to_thread(job))
            except Exception as e:
                logger.warning(f"Job {key} failed: {type(e).__name__}: {e}")
                return JobOutcome(key=key, error=f"{type(e).__name__}: {e}")

    async with asyncio.TaskGroup() as tg:
        tasks = [tg.create_task(run_one(key, job)) for key, job in jobs]

    return [task.result() for task in tasks]


def run_jobs(jobs: Sequence[Tuple[str, Callable[[], T]]], max_workers: int = 1) -> List[JobOutcome[T]]:
    return asyncio.run(fanout(jobs, max_workers))


def aggregate(values: Sequence[float]) -> MetricSummary:
    """Mean and population standard deviation, every value weighted equally."""
    if not values:
        raise ValueError("nothing to aggregate")
    array = np.asarray(values, dtype=np.float64)
    return MetricSummary(mean=float(array.mean()), std=float(array.std()), count=len(values))

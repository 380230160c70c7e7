"""
Per-subdomain task pool

Runs independent subdomain work (local factorizations, Schur complements,
eigenproblems, local solves) with:
- Configurable concurrency limits (asyncio.Semaphore over a thread pool)
- Progress tracking via callbacks
- Results returned in subdomain order regardless of completion order
- Inline sequential execution when max_workers == 1
"""

import asyncio
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int, int], None]


@dataclass
class SubdomainBatchConfig:
    """Configuration for subdomain batches.

    Attributes:
        max_workers: Maximum number of concurrent subdomain tasks (default: 1)
        continue_on_error: Keep going after a failed task instead of raising (default: False)
    """
    max_workers: int = 1
    continue_on_error: bool = False

    def __post_init__(self):
        if self.max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {self.max_workers}")


@dataclass
class SubdomainTaskResult:
    """Outcome of one subdomain task.

    Attributes:
        index: Position in the batch (subdomain index)
        success: Whether the task returned normally
        value: Return value (None if failed)
        error: Error message (None if succeeded)
        execution_time: Time taken in seconds
    """
    index: int
    success: bool = False
    value: Any = None
    error: Optional[str] = None
    execution_time: float = 0.0
    exception: Optional[BaseException] = field(default=None, repr=False)


class SubdomainBatchProcessor:
    """Runs a function over subdomain items, possibly concurrently.

    The heavy lifting happens in numpy/scipy kernels that release the GIL,
    so tasks run on a thread pool driven from an asyncio event loop.

    Example:
        ```python
        processor = SubdomainBatchProcessor(SubdomainBatchConfig(max_workers=4))
        factors = processor.map_ordered(subdomains, factor_local)
        ```
    """

    def __init__(self, config: Optional[SubdomainBatchConfig] = None):
        self.config = config or SubdomainBatchConfig()

    @property
    def sequential(self) -> bool:
        return self.config.max_workers == 1

    def _execute(self, index: int, item: Any, func: Callable[[Any], Any]) -> SubdomainTaskResult:
        start = time.perf_counter()
        result = SubdomainTaskResult(index=index)
        try:
            result.value = func(item)
            result.success = True
        except Exception as e:
            result.error = f"{type(e).__name__}: {e}"
            result.exception = e
            logger.error(f"Subdomain task {index} failed: {result.error}")
        result.execution_time = time.perf_counter() - start
        return result

    async def _run_with_semaphore(
        self,
        semaphore: asyncio.Semaphore,
        executor: ThreadPoolExecutor,
        index: int,
        item: Any,
        func: Callable[[Any], Any],
        progress_callback: Optional[ProgressCallback],
        total: int,
        done: List[int],
    ) -> SubdomainTaskResult:
        async with semaphore:
            loop = asyncio.get_running_loop()
            result = await loop.run_in_executor(executor, self._execute, index, item, func)
        done[0] += 1
        if progress_callback:
            progress_callback(done[0], total, index)
        return result

    async def process_batch(
        self,
        items: Sequence[Any],
        func: Callable[[Any], Any],
        progress_callback: Optional[ProgressCallback] = None,
    ) -> List[SubdomainTaskResult]:
        """Process items concurrently.

        Args:
            items: One entry per subdomain
            func: Synchronous function applied to each item
            progress_callback: Optional callback(completed_count, total_count, index)

        Returns:
            List of SubdomainTaskResult in original order

        Raises:
            The first failing task's exception unless continue_on_error is set
        """
        items = list(items)
        if not items:
            return []
        semaphore = asyncio.Semaphore(self.config.max_workers)
        done = [0]
        with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            tasks = [
                self._run_with_semaphore(semaphore, executor, i, item, func,
                                         progress_callback, len(items), done)
                for i, item in enumerate(items)
            ]
            results = await asyncio.gather(*tasks)

        results = sorted(results, key=lambda r: r.index)
        self._check(results)
        return results

    def run(
        self,
        items: Sequence[Any],
        func: Callable[[Any], Any],
        progress_callback: Optional[ProgressCallback] = None,
    ) -> List[SubdomainTaskResult]:
        """Synchronous entry point; no event loop at all when max_workers == 1"""
        items = list(items)
        if not self.sequential:
            return asyncio.run(self.process_batch(items, func, progress_callback))
        results = []
        for i, item in enumerate(items):
            results.append(self._execute(i, item, func))
            if progress_callback:
                progress_callback(i + 1, len(items), i)
        self._check(results)
        return results

    def map_ordered(self, items: Sequence[Any], func: Callable[[Any], Any]) -> List[Any]:
        """Values of func over items, in item order"""
        return [r.value for r in self.run(items, func)]

    def _check(self, results: List[SubdomainTaskResult]) -> None:
        failed = [r for r in results if not r.success]
        if failed:
            logger.warning(f"{len(failed)}/{len(results)} subdomain tasks failed")
            if not self.config.continue_on_error:
                raise failed[0].exception
        else:
            total = sum(r.execution_time for r in results)
            logger.debug(f"Batch complete: {len(results)} tasks, total_time={total:.2f}s")

"""
Queue Manager for hazard-dantzig
Runs independent replications on a thread pool and folds results in submission order.
"""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional

from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from core.config import resolve_jobs

logger = logging.getLogger(__name__)


class TaskStatus(str, Enum):
    """Task status enumeration"""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class QueueTask(BaseModel):
    """One unit of work inside a batch"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str
    name: str
    index: int
    status: TaskStatus = TaskStatus.PENDING
    created_at: datetime
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    result: Optional[Any] = None
    error: Optional[str] = None
    exception: Optional[BaseException] = Field(default=None, exclude=True)

    @property
    def ok(self) -> bool:
        return self.status == TaskStatus.COMPLETED


def _show_progress() -> bool:
    return logging.getLogger().isEnabledFor(logging.INFO) and sys.stderr.isatty()


class QueueManager:
    """Thread-pool runner for embarrassingly parallel work"""

    def __init__(self, jobs: Optional[int] = None):
        self.jobs = resolve_jobs(jobs)
        self.tasks: List[QueueTask] = []

    def _execute_task(self, task: QueueTask, func: Callable[[Any], Any], item: Any) -> QueueTask:
        task.status = TaskStatus.RUNNING
        task.started_at = datetime.now()
        try:
            task.result = func(item)
            task.status = TaskStatus.COMPLETED
        except Exception as e:
            task.status = TaskStatus.FAILED
            task.error = f"{type(e).__name__}: {e}"
            task.exception = e
            logger.warning(f"Task {task.id} failed: {task.error}")
        task.completed_at = datetime.now()
        return task

    def run_batch(self, name: str, func: Callable[[Any], Any], items: Iterable[Any]) -> List[QueueTask]:
        """
        Apply `func` to every item. Failures are captured per task; the returned
        list is in submission order whatever the completion order.
        """
        items = list(items)
        now = datetime.now()
        batch = [
            QueueTask(id=f"{name}-{index}", name=name, index=index, created_at=now)
            for index in range(len(items))
        ]
        self.tasks.extend(batch)
        logger.info(f"Running {len(batch)} {name} tasks on {min(self.jobs, max(1, len(batch)))} workers")

        progress = tqdm(total=len(batch), desc=name, disable=not _show_progress())
        if self.jobs == 1 or len(batch) <= 1:
            for task, item in zip(batch, items):
                self._execute_task(task, func, item)
                progress.update(1)
        else:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                futures = [pool.submit(self._execute_task, task, func, item) for task, item in zip(batch, items)]
                for _ in as_completed(futures):
                    progress.update(1)
        progress.close()

        failed = sum(1 for task in batch if not task.ok)
        if failed:
            logger.warning(f"{failed} of {len(batch)} {name} tasks failed")
        return batch

    def map(self, name: str, func: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        """run_batch that re-raises the first failure"""
        batch = self.run_batch(name, func, items)
        for task in batch:
            if not task.ok:
                raise task.exception
        return [task.result for task in batch]

    def get_queue_stats(self) -> Dict[str, Any]:
        """Get queue statistics"""
        return {
            "total_tasks": len(self.tasks),
            "completed_tasks": len([t for t in self.tasks if t.status == TaskStatus.COMPLETED]),
            "failed_tasks": len([t for t in self.tasks if t.status == TaskStatus.FAILED]),
            "jobs": self.jobs,
        }


def get_queue_manager(jobs: Optional[int] = None) -> QueueManager:
    """Get a queue manager sized from --jobs, the environment, or the core count"""
    return QueueManager(jobs)

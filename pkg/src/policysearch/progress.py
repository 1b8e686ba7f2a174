"""Progress tracking for optimisation runs."""

import sys
import threading
from typing import Callable, Optional

from tqdm import tqdm


class ProgressTracker:
    """
    Counts completed training iterations across all repetitions of a run.

    Shows a tqdm bar on stderr, or with ``use_tqdm=False`` rewrites a plain
    ``<description>: <percent>% (<done>/<total>)`` line on stdout. Updates may come from
    several threads. Closing twice is a no-op.
    """

    def __init__(self, total: int, description: str = "Iterations", use_tqdm: bool = True):
        self.total = total
        self.description = description
        self.current = 0
        self.closed = False
        self._lock = threading.Lock()
        self._bar = tqdm(total=total, desc=description, unit="it") if use_tqdm else None

    def update(self, amount: int = 1):
        with self._lock:
            self.current = min(self.current + amount, self.total)
            if self._bar is not None:
                self._bar.update(amount)
                return
            percent = 100.0 * self.current / self.total if self.total > 0 else 100.0
            sys.stdout.write(
                f"\r{self.description}: {percent:.1f}% ({self.current}/{self.total})"
            )
            sys.stdout.flush()

    def close(self):
        with self._lock:
            if self.closed:
                return
            self.closed = True
            if self._bar is not None:
                self._bar.close()
            else:
                sys.stdout.write("\n")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def create_progress_callback(
    total: int, description: str = "Iterations", enabled: bool = True
) -> Optional[Callable[[int], None]]:
    """
    Per-iteration callback for :func:`policysearch.training.run`, or None when disabled.

    The tracker is closed once ``total`` iterations have been reported.
    """
    if not enabled or total <= 0:
        return None
    tracker = ProgressTracker(total, description)

    def callback(amount: int = 1):
        tracker.update(amount)
        if tracker.current >= total:
            tracker.close()

    return callback

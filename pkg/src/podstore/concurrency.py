"""Asynchronous saving with minimal blocking.

One workload executor and one podding worker share two non-reentrant
locks: ``ns_lock`` guards namespace metadata (the active-set check),
``active_lock`` is held for the whole duration of a save. A statement may
run during an in-flight save when it touches no active variable, or when
the static checker certifies it read-only; otherwise it waits for the
save to finish. Only one save is in flight at a time; starting another
joins the previous one first.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Set

from .store import CheckpointStore
from .workload import Statement, accessed_variables, statement_tag

DEFAULT_ALLOWLIST: FrozenSet[str] = frozenset({"read", "sum", "head"})


@dataclass
class LockPair:
    ns_lock: threading.Lock = field(default_factory=threading.Lock)
    active_lock: threading.Lock = field(default_factory=threading.Lock)


def ascc_check(stmt: Statement, allowlist: FrozenSet[str] = DEFAULT_ALLOWLIST) -> bool:
    """True iff the statement matches an allowlisted read-only pattern.

    Conservative: anything not matched is treated as potentially mutating.
    """
    return statement_tag(stmt) in allowlist


@dataclass(frozen=True)
class Proceed:
    pass


@dataclass(frozen=True)
class BlockUntilSaveDone:
    pass


def guard_statement(
    stmt: Statement,
    active_set: Set[str],
    allowlist: FrozenSet[str] = DEFAULT_ALLOWLIST,
):
    """Decide whether a statement may run while a save is in flight."""
    if not (accessed_variables(stmt) & active_set):
        return Proceed()
    if ascc_check(stmt, allowlist):
        return Proceed()
    return BlockUntilSaveDone()


class SaveHandle:
    """Join point for one asynchronous save."""

    def __init__(self) -> None:
        self._done = threading.Event()
        self.time_id: Optional[int] = None
        self.error: Optional[BaseException] = None
        self.worker_s: float = 0.0

    def join(self, timeout: Optional[float] = None) -> int:
        if not self._done.wait(timeout):
            raise TimeoutError("save did not finish in time")
        if self.error is not None:
            raise self.error
        assert self.time_id is not None
        return self.time_id

    def done(self) -> bool:
        return self._done.is_set()


class AsyncSaveEngine:
    """Owns the worker thread and the lock discipline for one store session."""

    def __init__(self, store: CheckpointStore, allowlist: FrozenSet[str] = DEFAULT_ALLOWLIST):
        self.store = store
        self.allowlist = allowlist
        self.locks = LockPair()
        self._active: Set[str] = set()
        self._handle: Optional[SaveHandle] = None
        self._thread: Optional[threading.Thread] = None

    # -- save path -----------------------------------------------------------

    def begin_async_save(self, accessed: Set[str]) -> SaveHandle:
        """Compute the active set synchronously, then save on the worker.

        Returns as soon as the worker owns the save; joining the handle
        yields the TimeId (or re-raises the worker's error).
        """
        if self._handle is not None and not self._handle.done():
            self._handle.join()
        if self._thread is not None:
            self._thread.join()

        with self.locks.ns_lock:
            active = self.store.active_variables(accessed)
        self.locks.active_lock.acquire()
        self._active = active
        handle = SaveHandle()
        self._handle = handle

        def work() -> None:
            started = time.perf_counter()
            try:
                handle.time_id = self.store.save_active(active)
            except BaseException as exc:  # surfaced at join
                handle.error = exc
            finally:
                with self.locks.ns_lock:
                    self._active = set()
                handle.worker_s = time.perf_counter() - started
                self.locks.active_lock.release()
                handle._done.set()

        self._thread = threading.Thread(target=work, name="podding-worker", daemon=True)
        self._thread.start()
        return handle

    def join(self) -> Optional[int]:
        """Wait for any in-flight save; returns its TimeId if there was one."""
        if self._handle is None:
            return None
        time_id = self._handle.join()
        if self._thread is not None:
            self._thread.join()
        return time_id

    @property
    def save_in_flight(self) -> bool:
        return self._handle is not None and not self._handle.done()

    # -- executor path ---------------------------------------------------------

    def wait_for_statement(self, stmt: Statement) -> float:
        """Block until the statement may safely run; returns seconds waited.

        Lock-free passage for statements that touch no active variable or
        that the static checker admits; everything else acquires the
        active lock (i.e. waits out the save).
        """
        with self.locks.ns_lock:
            active = set(self._active)
        if not active:
            return 0.0
        decision = guard_statement(stmt, active, self.allowlist)
        if isinstance(decision, Proceed):
            return 0.0
        started = time.perf_counter()
        self.locks.active_lock.acquire()
        self.locks.active_lock.release()
        return time.perf_counter() - started

"""Workload replay harness and benchmark generators.

Reported storage is always pod bytes plus manifest bytes, reconciled
exactly against the backend (a filesystem audit for the directory
backend). Wall-clock numbers are reported, never asserted; tests assert
ratios and orderings only.

CSV schema (one row per checkpoint, frozen):

    time_id,wall_s,blocked_s,pods_written,pods_skipped,bytes_written,manifest_bytes,objects_saved
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .concurrency import AsyncSaveEngine, SaveHandle
from .graph import ObjectGraph
from .storage import MemoryBackend, StorageBackend
from .store import CheckpointStore, StoreConfig
from .workload import (
    Checkpoint,
    Load,
    Script,
    Statement,
    execute_statement,
    parse_script,
)

CSV_COLUMNS = (
    "time_id",
    "wall_s",
    "blocked_s",
    "pods_written",
    "pods_skipped",
    "bytes_written",
    "manifest_bytes",
    "objects_saved",
)


@dataclass
class CheckpointMetrics:
    time_id: int
    wall_s: float
    blocked_s: float
    pods_written: int
    pods_skipped: int
    bytes_written: int
    manifest_bytes: int
    objects_saved: int


@dataclass
class RunMetrics:
    checkpoints: List[CheckpointMetrics] = field(default_factory=list)
    pod_bytes: int = 0
    manifest_bytes: int = 0
    namespace_bytes: int = 0  # pod bytes written by the first checkpoint
    objects_total: int = 0
    save_wall_total_s: float = 0.0
    blocked_total_s: float = 0.0
    load_wall_total_s: float = 0.0

    @property
    def storage_bytes(self) -> int:
        return self.pod_bytes + self.manifest_bytes

    @property
    def throughput_objects_per_s(self) -> float:
        if self.save_wall_total_s <= 0:
            return 0.0
        return self.objects_total / self.save_wall_total_s

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CSV_COLUMNS)
        for cp in self.checkpoints:
            writer.writerow([getattr(cp, col) for col in CSV_COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "checkpoints": len(self.checkpoints),
            "storage_bytes": self.storage_bytes,
            "pod_bytes": self.pod_bytes,
            "manifest_bytes": self.manifest_bytes,
            "namespace_bytes": self.namespace_bytes,
            "objects_total": self.objects_total,
            "throughput_objects_per_s": self.throughput_objects_per_s,
            "save_wall_total_s": self.save_wall_total_s,
            "blocked_total_s": self.blocked_total_s,
            "load_wall_total_s": self.load_wall_total_s,
        }

    def audit_matches(self, backend: StorageBackend) -> bool:
        return (
            self.pod_bytes == backend.pod_bytes_total()
            and self.manifest_bytes == backend.manifest_bytes_total()
        )


class WorkloadSession:
    """Executes statements against one namespace and its checkpoint store.

    Accessed variables accumulate between checkpoints: a checkpoint saves
    with everything mentioned since the previous one, mirroring how a save
    follows each executed cell. With ``use_async`` the save runs on the
    podding worker and statements are guarded instead of serialized.
    """

    def __init__(
        self,
        config: Optional[StoreConfig] = None,
        backend: Optional[StorageBackend] = None,
        use_async: bool = False,
        retain_snapshots: bool = False,
        seed: int = 0,
    ):
        self.graph = ObjectGraph()
        self.backend = backend if backend is not None else MemoryBackend()
        self.store = CheckpointStore(self.graph, self.backend, config)
        self.engine = AsyncSaveEngine(self.store) if use_async else None
        self.metrics = RunMetrics()
        self.retain_snapshots = retain_snapshots
        self.snapshots: Dict[int, ObjectGraph] = {}
        self.seed = seed
        self._accessed: Set[str] = set()
        self._stmt_index = 0
        self._pending: Optional[Tuple[SaveHandle, CheckpointMetrics, Optional[ObjectGraph]]] = None

    # -- statement execution ---------------------------------------------------

    def execute(self, stmt: Statement):
        """Run one statement; returns its effect (None for checkpoint/load)."""
        self._stmt_index += 1
        if isinstance(stmt, Checkpoint):
            return self.checkpoint()
        if isinstance(stmt, Load):
            return self.load(set(stmt.names), stmt.time_index)
        blocked = 0.0
        if self.engine is not None and self.engine.save_in_flight:
            blocked = self.engine.wait_for_statement(stmt)
            if self._pending is not None:
                self._pending[1].blocked_s += blocked
        effect = execute_statement(self.graph, stmt, self.seed + self._stmt_index)
        self._accessed |= effect.accessed
        return effect

    def checkpoint(self) -> int:
        accessed, self._accessed = self._accessed, set()
        snapshot = self.graph.clone() if self.retain_snapshots else None
        if self.engine is None:
            started = time.perf_counter()
            time_id = self.store.save(accessed)
            wall = time.perf_counter() - started
            report = self.store.last_report
            cp = CheckpointMetrics(
                time_id=time_id, wall_s=wall, blocked_s=wall,
                pods_written=report.pods_written, pods_skipped=report.pods_skipped,
                bytes_written=report.bytes_written, manifest_bytes=report.manifest_bytes,
                objects_saved=report.objects_saved,
            )
            self._absorb(cp)
            if snapshot is not None:
                self.snapshots[time_id] = snapshot
            return time_id
        self._finish_pending()
        started = time.perf_counter()
        handle = self.engine.begin_async_save(accessed)
        begin_s = time.perf_counter() - started
        cp = CheckpointMetrics(
            time_id=-1, wall_s=0.0, blocked_s=begin_s,
            pods_written=0, pods_skipped=0, bytes_written=0,
            manifest_bytes=0, objects_saved=0,
        )
        self._pending = (handle, cp, snapshot)
        return -1  # time id known at join

    def _finish_pending(self) -> None:
        if self._pending is None:
            return
        handle, cp, snapshot = self._pending
        self._pending = None
        cp.time_id = handle.join()
        report = self.store.last_report
        cp.wall_s = handle.worker_s
        cp.pods_written = report.pods_written
        cp.pods_skipped = report.pods_skipped
        cp.bytes_written = report.bytes_written
        cp.manifest_bytes = report.manifest_bytes
        cp.objects_saved = report.objects_saved
        self._absorb(cp)
        if snapshot is not None:
            self.snapshots[cp.time_id] = snapshot

    def _absorb(self, cp: CheckpointMetrics) -> None:
        self.metrics.checkpoints.append(cp)
        if not self.metrics.namespace_bytes:
            self.metrics.namespace_bytes = cp.bytes_written
        self.metrics.pod_bytes += cp.bytes_written
        self.metrics.manifest_bytes += cp.manifest_bytes
        self.metrics.objects_total += cp.objects_saved
        self.metrics.save_wall_total_s += cp.wall_s
        self.metrics.blocked_total_s += cp.blocked_s

    def load(self, names: Set[str], time_id: int) -> ObjectGraph:
        """Fetch named variables at a saved time (verification read; the
        live namespace is left untouched)."""
        self.join()
        started = time.perf_counter()
        fragment = self.store.load(names, time_id)
        self.metrics.load_wall_total_s += time.perf_counter() - started
        return fragment

    def join(self) -> None:
        """Drain any in-flight save into the metrics."""
        self._finish_pending()

    def finish(self) -> RunMetrics:
        self.join()
        return self.metrics


def run_script(
    script: Script,
    config: Optional[StoreConfig] = None,
    backend: Optional[StorageBackend] = None,
    use_async: bool = False,
    retain_snapshots: bool = False,
    seed: int = 0,
) -> Tuple[RunMetrics, WorkloadSession]:
    session = WorkloadSession(
        config=config, backend=backend, use_async=use_async,
        retain_snapshots=retain_snapshots, seed=seed,
    )
    for stmt in script:
        session.execute(stmt)
    return session.finish(), session


# -- generators ------------------------------------------------------------


MUTATION_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)
MUTATION_CELLS = 9


def gen_mutation_sweep(scale: float = 0.01) -> Dict[float, Script]:
    """One script per mutation fraction: build 100 lists of byte strings,
    then 9 cells each rewriting that fraction of the lists."""
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    strings_per_list = max(1, round(100_000 * scale))
    scripts: Dict[float, Script] = {}
    for fraction in MUTATION_FRACTIONS:
        lines = [f"make_lists data 100 {strings_per_list} 100", "checkpoint"]
        for cell in range(MUTATION_CELLS):
            lines.append(f"mutate_fraction data {fraction!r} {1000 + cell}")
            lines.append("checkpoint")
        scripts[fraction] = parse_script("\n".join(lines))
    return scripts


SCALE_POINTS = (1, 10, 100, 1_000, 10_000)


def gen_scale_sweep() -> Dict[str, Script]:
    """Small instances eligible for exhaustive search plus a size ladder."""
    scripts: Dict[str, Script] = {}
    for n_lists in (1, 2, 3):
        for per_list in (1, 2, 3):
            lines = [f"make_lists data {n_lists} {per_list} 100", "checkpoint"]
            for cell in range(2):
                lines.append(f"mutate_fraction data 0.5 {2000 + cell}")
                lines.append("checkpoint")
            scripts[f"small_{n_lists}x{per_list}"] = parse_script("\n".join(lines))
    for per_list in SCALE_POINTS:
        lines = [f"make_lists data 100 {per_list} 100", "checkpoint"]
        for cell in range(10):
            lines.append(f"mutate_fraction data 0.01 {3000 + cell}")
            lines.append("checkpoint")
        scripts[f"scale_{per_list}"] = parse_script("\n".join(lines))
    return scripts


COST_MODEL_STRATEGIES = frozenset({"lga", "lga-0", "lga-1", "exhaustive"})


def compare_optimizers(
    scripts: Dict[str, Script],
    strategies: Sequence[str],
    base_config: Optional[StoreConfig] = None,
) -> List[dict]:
    """Replay each script under each strategy on a fresh in-memory store.

    Cost-model strategies run with the feature-based volatility model (the
    stand-in for a trained model) unless the base config overrides it: the
    change-frequency estimator has no history on a strategy's first save
    and its flat prior makes every first partition degenerate, which would
    measure the cold start rather than the optimizer.
    """
    base = base_config or StoreConfig()
    rows: List[dict] = []
    for script_name, script in sorted(scripts.items()):
        for strategy in strategies:
            overrides = {"optimizer": strategy}
            if strategy in COST_MODEL_STRATEGIES and base.volatility == "empirical":
                overrides["volatility"] = "feature"
            config = StoreConfig(**{**base.__dict__, **overrides})
            metrics, _ = run_script(script, config=config)
            rows.append(
                {
                    "script": script_name,
                    "optimizer": strategy,
                    "storage_bytes": metrics.storage_bytes,
                    "pod_bytes": metrics.pod_bytes,
                    "manifest_bytes": metrics.manifest_bytes,
                    "save_wall_total_s": metrics.save_wall_total_s,
                    "objects_total": metrics.objects_total,
                }
            )
    return rows


def comparison_csv(rows: List[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()

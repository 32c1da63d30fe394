"""Incremental checkpoint store for evolving object graphs.

Saves partition the namespace into pods via a cost-model optimizer, write
only pods whose bytes changed, and restore any subset of variables at any
saved time. Saving can run asynchronously on a podding worker guarded by
two locks and a static read-only checker.
"""

from .bench import RunMetrics, WorkloadSession, run_script
from .concurrency import AsyncSaveEngine, ascc_check, guard_statement
from .graph import (
    Kind,
    ObjectGraph,
    ObjectNode,
    canonical_serialize,
    connected_variables,
    object_size,
    reachable_from,
)
from .optimizer import Action, CostParams, DecisionMemo, expected_cost
from .podding import PodId, map_virtual_to_global, pod_save, unpod
from .storage import DirectoryBackend, MemoryBackend, SaveManifest
from .store import CheckpointStore, StoreConfig
from .workload import Script, execute_statement, parse_script, render_script

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AsyncSaveEngine",
    "CheckpointStore",
    "CostParams",
    "DecisionMemo",
    "DirectoryBackend",
    "Kind",
    "MemoryBackend",
    "ObjectGraph",
    "ObjectNode",
    "PodId",
    "RunMetrics",
    "SaveManifest",
    "Script",
    "StoreConfig",
    "WorkloadSession",
    "ascc_check",
    "canonical_serialize",
    "connected_variables",
    "expected_cost",
    "execute_statement",
    "guard_statement",
    "map_virtual_to_global",
    "object_size",
    "parse_script",
    "pod_save",
    "reachable_from",
    "render_script",
    "run_script",
    "unpod",
]

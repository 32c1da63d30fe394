"""The save/load surface of the checkpoint store.

``save`` pods only the active variables (those connected, at the pod
level, to something the workload accessed since the previous save),
deduplicates pod bytes against the thesaurus, and carries every inactive
variable forward by manifest reference with zero serialization work.
``load`` resolves names at a given time, follows carried-forward links
back to the save that last wrote them, and unpods exactly the pods the
requested closure spans.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .dedup import DIGESTS, MustWrite, PodThesaurus, SynonymTable, check_and_register
from .errors import MalformedBytes, UnknownTimeId, UnknownVariable
from .graph import ObjectGraph, first_visit_order, object_size
from .optimizer import (
    Action,
    BundleAll,
    ConstantVolatility,
    CostParams,
    DecisionMemo,
    EmpiricalFrequencyVolatility,
    Lga,
    PoddingStrategy,
    RandomActions,
    SplitAll,
    TypeCatalog,
    VolatilityEstimator,
    exhaustive_plan,
    make_estimator,
)
from .podding import PageRegistry, PodId, pod_save, unpod
from .storage import SaveManifest, StorageBackend


@dataclass
class StoreConfig:
    page_size: int = 1024
    c_pod: float = 1200.0
    max_pod_depth: int = 3
    thesaurus_bytes: int = 64 * 1024 * 1024
    digest: str = "xxh3-128"
    optimizer: str = "lga"
    volatility: str = "empirical"
    constant_rate: float = 0.5
    seed: int = 0
    exhaustive_cap: int = 20
    tbh_catalog: Optional[dict] = None

    def as_meta(self) -> dict:
        return {
            "page_size": self.page_size,
            "c_pod": self.c_pod,
            "max_pod_depth": self.max_pod_depth,
            "thesaurus_bytes": self.thesaurus_bytes,
            "digest": self.digest,
            "optimizer": self.optimizer,
            "volatility": self.volatility,
            "seed": self.seed,
        }


@dataclass
class SaveReport:
    time_id: int
    pods_written: int
    pods_skipped: int
    bytes_written: int
    manifest_bytes: int
    objects_saved: int
    active: Set[str]
    wall_s: float = 0.0
    actions: Dict[int, Action] = field(default_factory=dict)


class CheckpointStore:
    """One session over a namespace graph and a storage backend."""

    def __init__(self, graph: ObjectGraph, backend: StorageBackend, config: Optional[StoreConfig] = None):
        self.graph = graph
        self.backend = backend
        self.config = config or StoreConfig()
        if self.config.digest not in DIGESTS:
            raise ValueError(f"unknown digest {self.config.digest!r}")
        self.params = CostParams(self.config.c_pod, self.config.max_pod_depth)
        self.pages = PageRegistry(self.config.page_size)
        self.memo = DecisionMemo()
        self.thesaurus = PodThesaurus(self.config.thesaurus_bytes, DIGESTS[self.config.digest])
        self.synonyms = SynonymTable()
        self.estimator = self._make_estimator()
        self.strategy = self._make_strategy()
        self._next_time = 1
        # Per variable: (origin time, root pod id, member index at origin).
        self._var_state: Dict[str, Tuple[int, PodId, int]] = {}
        # Pod edges and root pod per save, kept for the active filter.
        self._edges_by_time: Dict[int, List[Tuple[PodId, PodId]]] = {}
        self._root_pod_by_time: Dict[int, Optional[PodId]] = {}
        self._manifest_cache: Dict[int, SaveManifest] = {}
        self.last_report: Optional[SaveReport] = None
        existing = backend.list_time_ids()
        if existing:
            self._next_time = max(existing) + 1
        backend.write_meta(self.config.as_meta())

    def _make_estimator(self) -> VolatilityEstimator:
        return make_estimator(self.config.volatility, self.config.constant_rate)

    def _make_strategy(self) -> PoddingStrategy:
        name = self.config.optimizer
        if name == "lga":
            return Lga(self.params, self.estimator, self.memo)
        if name == "lga-0":
            return Lga(self.params, ConstantVolatility(0.0), self.memo)
        if name == "lga-1":
            return Lga(self.params, ConstantVolatility(1.0), self.memo)
        if name == "bundle-all":
            return BundleAll()
        if name == "split-all":
            return SplitAll()
        if name == "random":
            return RandomActions(self.config.seed)
        if name == "tbh":
            return TypeCatalog(self.config.tbh_catalog)
        if name == "exhaustive":
            return None  # planned per save
        raise ValueError(f"unknown optimizer {name!r}")

    # -- active variable filter ------------------------------------------------

    def active_variables(self, accessed: Set[str]) -> Set[str]:
        """Names whose prior pods share a component with an accessed pod.

        The first save treats every variable as active, as do names that
        have never been saved. Root pods are ignored when forming
        components; like the namespace root object, they would otherwise
        connect unrelated variables.
        """
        for name in accessed:
            if name not in self.graph.variables:
                raise UnknownVariable(name)
        if not self._var_state:
            return set(self.graph.variables)

        # Names that were never saved have no prior pods to carry forward.
        active = {name for name in self.graph.variables if name not in self._var_state}

        parent: Dict[PodId, PodId] = {}

        def find(x: PodId) -> PodId:
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a: PodId, b: PodId) -> None:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

        origins = {state[0] for state in self._var_state.values()}
        root_pods = {self._root_pod_by_time.get(t) for t in origins}
        for t in origins:
            for a, b in self._edges_by_time.get(t, ()):
                if a in root_pods or b in root_pods:
                    continue
                union(a, b)

        seeds = [
            find(self._var_state[name][1]) for name in accessed if name in self._var_state
        ]
        seed_set = set(seeds)
        for name, (_, pod, _) in self._var_state.items():
            if find(pod) in seed_set:
                active.add(name)
        return active

    # -- saving ------------------------------------------------------------

    def save(self, accessed: Set[str]) -> int:
        """Pod, deduplicate and persist the active closure; returns the TimeId."""
        active = self.active_variables(accessed)
        return self.save_active(active)

    def save_active(self, active: Set[str]) -> int:
        started = _time.perf_counter()
        t = self._next_time
        self._next_time += 1

        manifest = SaveManifest(time_id=t)
        report = SaveReport(
            time_id=t, pods_written=0, pods_skipped=0, bytes_written=0,
            manifest_bytes=0, objects_saved=0, active=set(active),
        )

        written_pods: Set[PodId] = set()
        if active:
            strategy = self.strategy
            if strategy is None:  # exhaustive: plan against the current graph
                strategy = self._plan_exhaustive(active)
            result = pod_save(
                self.graph, active, strategy, time_id=t, pages=self.pages
            )
            for pod in result.pods:
                decision = check_and_register(self.thesaurus, self.synonyms, pod)
                if isinstance(decision, MustWrite):
                    self.backend.write_pod(pod.id, pod.bytes)
                    written_pods.add(pod.id)
                    report.pods_written += 1
                    report.bytes_written += len(pod.bytes)
                else:
                    manifest.synonyms.append((pod.id, decision.canonical))
                    report.pods_skipped += 1
                manifest.page_tables[pod.id] = list(pod.page_offsets)
            manifest.root_pod = result.root_pod
            manifest.pod_edges = sorted(result.pod_graph.edges)
            manifest.global_index = dict(result.global_index)
            report.objects_saved = len(result.placements)
            report.actions = result.actions

            for name in sorted(active):
                target = self.graph.target(name)
                pid, member = result.placements[target]
                manifest.variable_roots[name] = pid
                manifest.variable_members[name] = member
                self._var_state[name] = (t, pid, member)

            self._update_volatility(result, written_pods)
            self._edges_by_time[t] = manifest.pod_edges
            self._root_pod_by_time[t] = result.root_pod

        for name in self.graph.variables:
            if name in active:
                continue
            origin, pid, _member = self._var_state[name]
            manifest.carried_forward[name] = (origin, pid)

        report.manifest_bytes = self.backend.write_manifest(manifest)
        self._manifest_cache[t] = manifest
        report.wall_s = _time.perf_counter() - started
        self.last_report = report
        return t

    def _plan_exhaustive(self, active: Set[str]) -> PoddingStrategy:
        targets = []
        seen = set()
        for name in sorted(active):
            oid = self.graph.target(name)
            if oid not in seen:
                seen.add(oid)
                targets.append(oid)
        order = first_visit_order(self.graph, targets, self.graph.root)
        sizes = {oid: float(object_size(self.graph.nodes[oid])) for oid, _ in order}
        rates = {oid: self.estimator.rate(self.graph.nodes[oid]) for oid, _ in order}
        return exhaustive_plan(
            self.graph, targets, sizes, rates,
            self.params, self.config.exhaustive_cap, self.graph.root,
        )

    def _update_volatility(self, result, written_pods: Set[PodId]) -> None:
        if not isinstance(self.estimator, EmpiricalFrequencyVolatility):
            return
        for oid, (pid, _) in result.placements.items():
            _, seen = self.estimator.counts(oid)
            changed = seen > 0 and pid in written_pods
            self.estimator.observe(oid, changed)

    # -- loading -----------------------------------------------------------

    def manifest(self, time_id: int) -> SaveManifest:
        m = self._manifest_cache.get(time_id)
        if m is None:
            if time_id not in self.backend.list_time_ids():
                raise UnknownTimeId(time_id)
            m = self.backend.read_manifest(time_id)
            self._manifest_cache[time_id] = m
        return m

    def list_time_ids(self) -> List[int]:
        return self.backend.list_time_ids()

    def load(self, names: Set[str], time_id: int) -> ObjectGraph:
        """Rebuild the named variables as they were at ``time_id``.

        Shared structure between requested names is reconstructed as
        shared. The result is a fresh namespace graph holding only the
        requested variables.
        """
        if time_id not in self.backend.list_time_ids():
            raise UnknownTimeId(time_id)
        manifest = self.manifest(time_id)

        # Resolve each name to (origin time, pod, member).
        entries: Dict[str, Tuple[int, PodId, int]] = {}
        for name in names:
            origin, m = time_id, manifest
            while name not in m.variable_roots:
                if name not in m.carried_forward:
                    raise UnknownVariable(name)
                origin = m.carried_forward[name][0]
                m = self.manifest(origin)
            entries[name] = (origin, m.variable_roots[name], m.variable_members[name])

        fragment = ObjectGraph()
        by_origin: Dict[int, List[str]] = {}
        for name, (origin, _, _) in entries.items():
            by_origin.setdefault(origin, []).append(name)

        for origin in sorted(by_origin):
            m = self.manifest(origin)
            syn = dict(m.synonyms)

            def fetch(pid: PodId, _syn=syn) -> bytes:
                return self.backend.read_pod(_syn.get(pid, pid))

            root_pods = {entries[name][1] for name in by_origin[origin]}
            piece = unpod(
                sorted(root_pods), fetch,
                page_size=self.config.page_size, global_index=m.global_index,
            )
            remap: Dict[int, int] = {}
            for old_id in sorted(piece.nodes):
                node = piece.nodes[old_id]
                remap[old_id] = fragment._new_node(node.kind, node.payload, []).id
            for old_id, node in piece.nodes.items():
                fragment.nodes[remap[old_id]].children = [remap[c] for c in node.children]
            for name in by_origin[origin]:
                _, pid, member = entries[name]
                entry = piece.entries.get((pid, member))
                if entry is None:
                    raise MalformedBytes(
                        0, f"pod {pid} has no member {member} for variable {name!r}"
                    )
                fragment.bind(name, remap[entry])
        return fragment

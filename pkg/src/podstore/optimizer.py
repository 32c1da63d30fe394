"""Podding decision strategies and the storage cost model.

The expected cost of a partition is

    sum over pods [ c_pod + (sum of member sizes) * (sum of member rates) ]

where each object's mutation rate composes additively over a pod. The
greedy strategy compares the marginal cost of bundling an object into the
current pod against splitting it into a fresh pod, and memoizes the chosen
action per object so repeated saves partition identically.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import OverlappingPods, TooLarge
from .graph import Kind, ObjectGraph, ObjectNode, first_visit_order, object_size


class Action(Enum):
    BUNDLE = "bundle"
    SPLIT_CONTINUE = "split_continue"
    SPLIT_FINAL = "split_final"


@dataclass
class CostParams:
    c_pod: float = 1200.0
    max_pod_depth: int = 3

    def __post_init__(self):
        if self.c_pod <= 0:
            raise ValueError("c_pod must be positive")
        if self.max_pod_depth <= 0:
            raise ValueError("max_pod_depth must be positive")


@dataclass
class PodStats:
    """Running size/rate totals of the pod currently being filled."""

    size: float = 0.0
    volatility: float = 0.0
    depth: int = 0

    def admit(self, s_u: float, lam_u: float) -> None:
        self.size += s_u
        self.volatility += lam_u


class DecisionMemo:
    """Per-object action memo; once set, an action never changes in a session."""

    def __init__(self) -> None:
        self._actions: Dict[int, Action] = {}

    def get(self, oid: int) -> Optional[Action]:
        return self._actions.get(oid)

    def record(self, oid: int, action: Action) -> None:
        prior = self._actions.setdefault(oid, action)
        assert prior == action, f"memoized action changed for object {oid}"

    def __len__(self) -> int:
        return len(self._actions)


def expected_cost(
    partition: Iterable[Iterable[int]],
    sizes: Mapping[int, float],
    volatilities: Mapping[int, float],
    params: CostParams,
) -> float:
    """Expected storage cost of a disjoint partition (cost model above)."""
    seen: set = set()
    total = 0.0
    for members in partition:
        members = list(members)
        if not members:
            continue
        pod_size = 0.0
        pod_rate = 0.0
        for oid in members:
            if oid in seen:
                raise OverlappingPods(f"object {oid} appears in more than one pod")
            seen.add(oid)
            pod_size += sizes[oid]
            pod_rate += volatilities[oid]
        total += params.c_pod + pod_size * pod_rate
    return total


def delta_bundle(pod: PodStats, s_u: float, lam_u: float) -> float:
    """Marginal cost of bundling object u into the current pod."""
    return pod.size * lam_u + s_u * (pod.volatility + lam_u)


def delta_split(s_u: float, lam_u: float, params: CostParams) -> float:
    """Marginal cost of splitting object u into its own new pod."""
    return params.c_pod + s_u * lam_u


def lga_action(
    oid: int,
    pod: PodStats,
    params: CostParams,
    lam_u: float,
    s_u: float,
    memo: Optional[DecisionMemo] = None,
) -> Action:
    """Locally optimal action for one object; ties go to the split branch."""
    if memo is not None:
        prior = memo.get(oid)
        if prior is not None:
            return prior
    if delta_bundle(pod, s_u, lam_u) < delta_split(s_u, lam_u, params):
        action = Action.BUNDLE
    elif pod.depth < params.max_pod_depth:
        action = Action.SPLIT_CONTINUE
    else:
        action = Action.SPLIT_FINAL
    if memo is not None:
        memo.record(oid, action)
    return action


# --- volatility estimators ---------------------------------------------------


class VolatilityEstimator:
    """Per-object mutation rate in [0, 1]."""

    def rate(self, node: ObjectNode) -> float:
        raise NotImplementedError


class ConstantVolatility(VolatilityEstimator):
    def __init__(self, value: float):
        self.value = min(1.0, max(0.0, value))

    def rate(self, node: ObjectNode) -> float:
        return self.value


class FeatureHeuristicVolatility(VolatilityEstimator):
    """Stand-in for a trained model: a clamped log-linear score of cheap features."""

    def __init__(self, w0: float = 0.05, w1: float = 0.01, w2: float = 0.02):
        self.w0, self.w1, self.w2 = w0, w1, w2

    def rate(self, node: ObjectNode) -> float:
        score = (
            self.w0
            + self.w1 * math.log1p(object_size(node))
            + self.w2 * math.log1p(len(node.children))
        )
        return min(1.0, max(0.0, score))


class MappingVolatility(VolatilityEstimator):
    """Fixed per-object rates, for instances whose rates are given up front."""

    def __init__(self, rates: Mapping[int, float], default: float = 0.0):
        self.rates = dict(rates)
        self.default = default

    def rate(self, node: ObjectNode) -> float:
        return self.rates.get(node.id, self.default)


class EmpiricalFrequencyVolatility(VolatilityEstimator):
    """Laplace-smoothed change frequency: (changes + 1) / (checkpoints + 2).

    An object counts as changed at a save when the pod holding it was
    actually rewritten (its bytes differed). First appearance counts as an
    observation, not a change.
    """

    def __init__(self) -> None:
        self._changes: Dict[int, int] = {}
        self._checkpoints: Dict[int, int] = {}

    def rate(self, node: ObjectNode) -> float:
        oid = node.id
        return (self._changes.get(oid, 0) + 1) / (self._checkpoints.get(oid, 0) + 2)

    def observe(self, oid: int, changed: bool) -> None:
        self._checkpoints[oid] = self._checkpoints.get(oid, 0) + 1
        if changed:
            self._changes[oid] = self._changes.get(oid, 0) + 1

    def counts(self, oid: int) -> Tuple[int, int]:
        return self._changes.get(oid, 0), self._checkpoints.get(oid, 0)


# --- strategies ---------------------------------------------------------------


class PoddingStrategy:
    """Chooses an action per first-visited object during a save traversal."""

    name = "strategy"

    def rate(self, node: ObjectNode) -> float:
        return 0.0

    def choose(self, node: ObjectNode, s_u: float, lam_u: float, pod: PodStats) -> Action:
        raise NotImplementedError


class BundleAll(PoddingStrategy):
    name = "bundle-all"

    def choose(self, node, s_u, lam_u, pod):
        return Action.BUNDLE


class SplitAll(PoddingStrategy):
    name = "split-all"

    def choose(self, node, s_u, lam_u, pod):
        return Action.SPLIT_CONTINUE


class RandomActions(PoddingStrategy):
    """Uniformly random action per object, seeded for replayable runs."""

    name = "random"

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)

    def choose(self, node, s_u, lam_u, pod):
        return self._rng.choice((Action.BUNDLE, Action.SPLIT_CONTINUE, Action.SPLIT_FINAL))


class TypeCatalog(PoddingStrategy):
    """Type-based heuristic: look the object kind up in a catalog.

    Unlisted kinds bundle. The stock catalog splits containers with
    continuation and leaves finally, mirroring how compositional types
    mutate apart from their parents while immutable blobs stay stable.
    """

    name = "tbh"

    def __init__(self, catalog: Optional[Mapping[Kind, Action]] = None):
        self.catalog = dict(catalog) if catalog is not None else dict(DEFAULT_TYPE_CATALOG)

    def choose(self, node, s_u, lam_u, pod):
        return self.catalog.get(node.kind, Action.BUNDLE)


DEFAULT_TYPE_CATALOG: Mapping[Kind, Action] = {
    Kind.CONTAINER: Action.SPLIT_CONTINUE,
    Kind.LEAF: Action.SPLIT_FINAL,
}

_ACTION_NAMES = {a.value: a for a in Action}


def parse_type_catalog(text: str) -> Dict[Kind, Action]:
    """Parse a catalog config: one `kind action` pair per line, # comments."""
    catalog: Dict[Kind, Action] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"catalog line {lineno}: expected `kind action`")
        kind_name, action_name = parts[0].lower(), parts[1].lower()
        try:
            kind = Kind[kind_name.upper()]
        except KeyError:
            raise ValueError(f"catalog line {lineno}: unknown kind {kind_name!r}")
        if action_name not in _ACTION_NAMES:
            raise ValueError(f"catalog line {lineno}: unknown action {action_name!r}")
        catalog[kind] = _ACTION_NAMES[action_name]
    return catalog


class Lga(PoddingStrategy):
    """One-pass greedy strategy with memoized decisions."""

    name = "lga"

    def __init__(
        self,
        params: CostParams,
        estimator: VolatilityEstimator,
        memo: Optional[DecisionMemo] = None,
    ):
        self.params = params
        self.estimator = estimator
        self.memo = memo if memo is not None else DecisionMemo()

    def rate(self, node: ObjectNode) -> float:
        return self.estimator.rate(node)

    def choose(self, node, s_u, lam_u, pod):
        return lga_action(node.id, pod, self.params, lam_u, s_u, self.memo)


class PlannedActions(PoddingStrategy):
    """Replays a precomputed object-to-action plan (exhaustive search output)."""

    name = "planned"

    def __init__(self, plan: Mapping[int, Action], rates: Mapping[int, float]):
        self.plan = dict(plan)
        self.rates = dict(rates)

    def rate(self, node: ObjectNode) -> float:
        return self.rates.get(node.id, 0.0)

    def choose(self, node, s_u, lam_u, pod):
        return self.plan.get(node.id, Action.BUNDLE)


# --- exhaustive search --------------------------------------------------------

EXHAUSTIVE_DECISION_CAP = 20
_CHUNK_BITS = 14


def partition_from_cuts(
    order: Sequence[Tuple[int, Optional[int]]], cut: Iterable[int]
) -> List[List[int]]:
    """Partition induced by cutting a subset of first-visit edges.

    ``order`` is the first-visit sequence; an object whose first-visit edge
    is kept joins its traversal parent's pod. Objects without a parent
    always start a pod.
    """
    cut_set = set(cut)
    pod_of: Dict[int, int] = {}
    pods: List[List[int]] = []
    for oid, parent in order:
        if parent is None or oid in cut_set:
            pod_of[oid] = len(pods)
            pods.append([oid])
        else:
            idx = pod_of[parent]
            pod_of[oid] = idx
            pods[idx].append(oid)
    return pods


def exhaustive_optimal(
    graph: ObjectGraph,
    targets: List[int],
    sizes: Mapping[int, float],
    volatilities: Mapping[int, float],
    params: CostParams,
    decision_cap: int = EXHAUSTIVE_DECISION_CAP,
    virtual_root: Optional[int] = None,
) -> Tuple[List[List[int]], float]:
    """Globally minimal-cost partition over all cut sets of first-visit edges.

    Enumerates all 2^k bundle/split assignments (k = objects with a
    traversal parent), vectorized in chunks. Raises TooLarge beyond the cap.
    """
    order = first_visit_order(graph, targets, virtual_root)
    decisions = [i for i, (_, parent) in enumerate(order) if parent is not None]
    k = len(decisions)
    if k > decision_cap:
        raise TooLarge(f"{k} decisions exceeds cap {decision_cap}")

    n = len(order)
    oid_of = [oid for oid, _ in order]
    pos = {oid: i for i, oid in enumerate(oid_of)}
    parent_pos = [pos[parent] if parent is not None else -1 for _, parent in order]
    bit_of = {node_i: b for b, node_i in enumerate(decisions)}
    s = np.array([float(sizes[oid]) for oid in oid_of])
    lam = np.array([float(volatilities[oid]) for oid in oid_of])

    best_cost = math.inf
    best_mask = 0
    total_masks = 1 << k
    chunk = 1 << min(_CHUNK_BITS, k)
    for start in range(0, total_masks, chunk):
        masks = np.arange(start, min(start + chunk, total_masks), dtype=np.int64)
        m = len(masks)
        root_of = np.empty((m, n), dtype=np.int32)
        for i in range(n):
            if parent_pos[i] < 0:
                root_of[:, i] = i
            else:
                is_cut = (masks >> bit_of[i]) & 1
                root_of[:, i] = np.where(is_cut, i, root_of[:, parent_pos[i]])
        pod_rate = np.zeros((m, n))
        rows = np.arange(m)
        for i in range(n):
            pod_rate[rows, root_of[:, i]] += lam[i]
        inner = np.zeros(m)
        for i in range(n):
            inner += s[i] * pod_rate[rows, root_of[:, i]]
        n_pods = np.full(m, n - k, dtype=np.int64)
        for i in decisions:
            n_pods += (masks >> bit_of[i]) & 1
        costs = params.c_pod * n_pods + inner
        idx = int(np.argmin(costs))
        if costs[idx] < best_cost:
            best_cost = float(costs[idx])
            best_mask = int(masks[idx])

    cut = [oid_of[i] for i in decisions if (best_mask >> bit_of[i]) & 1]
    partition = partition_from_cuts(order, cut)
    return partition, best_cost


def exhaustive_plan(
    graph: ObjectGraph,
    targets: List[int],
    sizes: Mapping[int, float],
    volatilities: Mapping[int, float],
    params: CostParams,
    decision_cap: int = EXHAUSTIVE_DECISION_CAP,
    virtual_root: Optional[int] = None,
) -> PlannedActions:
    """Optimal cut set expressed as a per-object action plan for the podder."""
    partition, _ = exhaustive_optimal(
        graph, targets, sizes, volatilities, params, decision_cap, virtual_root
    )
    pod_index: Dict[int, int] = {}
    for i, members in enumerate(partition):
        for oid in members:
            pod_index[oid] = i
    order = first_visit_order(graph, targets, virtual_root)
    plan: Dict[int, Action] = {}
    for oid, parent in order:
        if parent is None:
            plan[oid] = Action.SPLIT_CONTINUE
        elif pod_index[oid] == pod_index[parent]:
            plan[oid] = Action.BUNDLE
        else:
            plan[oid] = Action.SPLIT_CONTINUE
    return PlannedActions(plan, dict(volatilities))


# --- theory helpers -----------------------------------------------------------


def split_everything_cost(
    sizes: Mapping[int, float], volatilities: Mapping[int, float], params: CostParams
) -> float:
    """Cost of the all-singleton partition."""
    return sum(params.c_pod + sizes[u] * volatilities[u] for u in sizes)


def approximation_alpha(
    sizes: Mapping[int, float], volatilities: Mapping[int, float], params: CostParams
) -> float:
    """Instance-specific approximation factor bound for the greedy strategy.

    alpha = min( c_pod / (2 * gamma), sqrt(c_pod / (16 * mu_s * mu_lam)) )
    with gamma the mean of size*rate, mu_s the mean size and mu_lam the
    mean rate. Infinite when a mean degenerates to zero.
    """
    n = len(sizes)
    if n == 0:
        return 0.0
    gamma = sum(sizes[u] * volatilities[u] for u in sizes) / n
    mu_s = sum(sizes.values()) / n
    mu_lam = sum(volatilities.values()) / n
    bound_a = params.c_pod / (2 * gamma) if gamma > 0 else math.inf
    bound_b = (
        math.sqrt(params.c_pod / (16 * mu_s * mu_lam)) if mu_s > 0 and mu_lam > 0 else math.inf
    )
    return min(bound_a, bound_b)


STRATEGY_NAMES = (
    "lga",
    "lga-0",
    "lga-1",
    "bundle-all",
    "split-all",
    "random",
    "tbh",
    "exhaustive",
)


def make_estimator(name: str, value: float = 0.5) -> VolatilityEstimator:
    if name == "constant":
        return ConstantVolatility(value)
    if name == "feature":
        return FeatureHeuristicVolatility()
    if name == "empirical":
        return EmpiricalFrequencyVolatility()
    raise ValueError(f"unknown volatility estimator {name!r}")

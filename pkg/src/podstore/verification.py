"""Reusable generators and property checks behind `verify` and the
acceptance suite.

Each check returns a CheckResult; the acceptance tests call the same
functions with their full parameters, the CLI runs trimmed-down versions.
The theory checks (near-optimality, greedy lemma, supermodularity) run
the greedy strategy without a binding depth cap, which is the form the
cost-model analysis describes.
"""

from __future__ import annotations

import random
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .concurrency import AsyncSaveEngine, ascc_check
from .errors import PodStoreError
from .graph import (
    Kind,
    ObjectGraph,
    canonical_serialize,
    first_visit_order,
    object_size,
)
from .optimizer import (
    Action,
    CostParams,
    Lga,
    MappingVolatility,
    approximation_alpha,
    exhaustive_optimal,
    expected_cost,
    partition_from_cuts,
    split_everything_cost,
)
from .podding import PageRegistry, VirtualMemoTable, map_virtual_to_global, pod_save, unpod
from .storage import DelayInjectingBackend, MemoryBackend
from .store import CheckpointStore, StoreConfig
from .workload import (
    AppendLeaf,
    Assign,
    Head,
    MutateFraction,
    Read,
    Statement,
    Sum,
    execute_statement,
)

THEORY_DEPTH_CAP = 1_000_000  # effectively uncapped: pure greedy, as analyzed


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        suffix = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}{suffix}"


# -- generators -------------------------------------------------------------


def random_object_graph(
    rng: random.Random,
    max_nodes: int = 200,
    cycles: bool = True,
    aliasing: bool = True,
) -> ObjectGraph:
    """Random namespace with shared substructure and (optionally) cycles."""
    g = ObjectGraph()
    n = rng.randint(1, max_nodes)
    ids: List[int] = []
    for _ in range(n):
        if ids and rng.random() < 0.6:
            n_children = rng.randint(1, min(4, len(ids)))
            children = rng.sample(ids, n_children) if aliasing else [rng.choice(ids)]
            oid = g.new_container(children, payload=rng.randbytes(rng.randint(0, 12)))
        else:
            oid = g.new_leaf(rng.randbytes(rng.randint(0, 60)))
        ids.append(oid)
    if cycles:
        for _ in range(max(1, n // 20)):
            a, b = rng.choice(ids), rng.choice(ids)
            node = g.nodes[a]
            if node.kind == Kind.CONTAINER:
                node.children.append(b)  # may form a cycle or a self-loop
    # Every parentless node becomes a variable so the graph is fully live.
    referenced: Set[int] = set()
    for oid in ids:
        referenced.update(g.nodes[oid].children)
    tops = [oid for oid in ids if oid not in referenced] or [ids[-1]]
    for i, oid in enumerate(tops):
        g.bind(f"v{i}", oid)
    if aliasing and len(tops) >= 1:
        g.bind("alias0", tops[0])
    return g


def random_instance(
    rng: random.Random,
    max_decisions: int = 18,
    c_pod_range: Tuple[float, float] = (50.0, 2000.0),
) -> Tuple[ObjectGraph, List[int], Dict[int, float], Dict[int, float], CostParams]:
    """Small namespace plus explicit sizes/rates for optimizer checks.

    Shaped like the small-scale benchmark namespaces: a handful of list
    variables holding leaves, with adversarially heterogeneous sizes and
    volatilities. Used where the property under test holds for arbitrary
    non-negative inputs (cost arithmetic, supermodularity, exhaustive).
    """
    g = ObjectGraph()
    budget = rng.randint(2, max_decisions)
    targets: List[int] = []
    while budget > 0:
        per_list = rng.randint(1, min(4, budget))
        leaves = [g.new_leaf(rng.randbytes(rng.randint(1, 50))) for _ in range(max(0, per_list - 1))]
        container = g.new_container(leaves)
        targets.append(container)
        budget -= per_list
    for i, oid in enumerate(targets):
        g.bind(f"v{i}", oid)

    order = first_visit_order(g, targets, g.root)
    sizes = {oid: float(rng.randint(8, 4000)) for oid, _ in order}
    lambdas = {oid: rng.random() for oid, _ in order}
    params = CostParams(
        c_pod=rng.uniform(*c_pod_range), max_pod_depth=THEORY_DEPTH_CAP
    )
    return g, targets, sizes, lambdas, params


def benchmark_instance(
    rng: random.Random,
) -> Tuple[ObjectGraph, List[int], Dict[int, float], Dict[int, float], CostParams]:
    """Randomized small-scale benchmark namespace for optimizer comparisons.

    Mirrors the synthetic notebooks the optimizer study uses: one to three
    list variables of one to three byte strings, string sizes drawn from
    the size ladder, default per-pod overhead. Rates look like a converged
    change-frequency estimate over a session: a whole list is either hot
    (mutated most cells) or cold (rarely mutated), its leaves share that
    rate, and containers only change when their structure does.
    """
    g = ObjectGraph()
    n_lists = rng.randint(1, 3)
    per_list = rng.randint(1, 3)
    string_bytes = rng.choice((1, 10, 100, 1_000, 10_000))
    targets: List[int] = []
    lambdas: Dict[int, float] = {}
    for _ in range(n_lists):
        leaves = [g.new_leaf(bytes(string_bytes)) for _ in range(per_list)]
        container = g.new_container(leaves)
        targets.append(container)
        checkpoints = rng.randint(10, 50)
        hot = rng.random() < 0.15
        changes = round(checkpoints * (rng.uniform(0.5, 1.0) if hot else rng.uniform(0.0, 0.1)))
        rate = (changes + 1) / (checkpoints + 2)
        for leaf in leaves:
            lambdas[leaf] = rate
        lambdas[container] = 1 / (checkpoints + 2)
    for i, oid in enumerate(targets):
        g.bind(f"v{i}", oid)
    lambdas[g.root] = 1 / (rng.randint(10, 50) + 2)

    order = first_visit_order(g, targets, g.root)
    sizes = {oid: float(object_size(g.nodes[oid])) for oid, _ in order}
    params = CostParams(c_pod=1200.0, max_pod_depth=THEORY_DEPTH_CAP)
    return g, targets, sizes, lambdas, params


def greedy_walk_cost(
    graph: ObjectGraph,
    targets: List[int],
    sizes: Dict[int, float],
    lambdas: Dict[int, float],
    params: CostParams,
) -> Tuple[float, List[List[int]]]:
    """One-pass greedy over the first-visit order with explicit size maps.

    Mirrors the save traversal: the namespace root opens pod 0; every
    other first-visited object compares bundle vs split marginal costs.
    """
    from .optimizer import PodStats, delta_bundle, delta_split

    order = first_visit_order(graph, targets, graph.root)
    pos_children: Dict[int, List[int]] = {}
    pods: List[List[int]] = []
    stats: List[PodStats] = []
    pod_of: Dict[int, int] = {}

    def open_pod(depth: int) -> int:
        pods.append([])
        stats.append(PodStats(depth=depth))
        return len(pods) - 1

    for oid, parent in order:
        s_u, lam_u = sizes[oid], lambdas[oid]
        if parent is None:
            idx = open_pod(0)
        else:
            parent_idx = pod_of[parent]
            if delta_bundle(stats[parent_idx], s_u, lam_u) < delta_split(s_u, lam_u, params):
                idx = parent_idx
            else:
                idx = open_pod(stats[parent_idx].depth + 1)
        pod_of[oid] = idx
        pods[idx].append(oid)
        stats[idx].admit(s_u, lam_u)
    cost = expected_cost(pods, sizes, lambdas, params)
    return cost, pods


# -- checks -------------------------------------------------------------------


ROUNDTRIP_STRATEGIES = ("lga", "lga-0", "lga-1", "bundle-all", "split-all", "random", "tbh")


def roundtrip_once(graph: ObjectGraph, optimizer: str, seed: int = 0) -> bool:
    """pod_save then unpod; canonical bytes must match the live graph."""
    config = StoreConfig(optimizer=optimizer, seed=seed, volatility="feature")
    store = CheckpointStore(graph.clone(), MemoryBackend(), config)
    strategy = store.strategy or store._plan_exhaustive(set(graph.variables))
    result = pod_save(
        store.graph, set(graph.variables), strategy, time_id=1, pages=store.pages
    )
    blobs = {pod.id: pod.bytes for pod in result.pods}
    root_pods = {result.placements[graph.variables[n]][0] for n in graph.variables}
    fragment_nodes = unpod(
        sorted(root_pods), lambda pid: blobs[pid],
        page_size=store.config.page_size, global_index=result.global_index,
    )
    rebuilt = ObjectGraph()
    remap: Dict[int, int] = {}
    for old_id in sorted(fragment_nodes.nodes):
        node = fragment_nodes.nodes[old_id]
        remap[old_id] = rebuilt._new_node(node.kind, node.payload, []).id
    for old_id, node in fragment_nodes.nodes.items():
        rebuilt.nodes[remap[old_id]].children = [remap[c] for c in node.children]
    for name, target in graph.variables.items():
        pid, member = result.placements[target]
        rebuilt.bind(name, remap[fragment_nodes.entries[(pid, member)]])
    names = set(graph.variables)
    return canonical_serialize(graph, names) == canonical_serialize(rebuilt, names)


def check_roundtrip(
    n_graphs: int = 50,
    max_nodes: int = 200,
    seed: int = 7,
    strategies: Sequence[str] = ROUNDTRIP_STRATEGIES,
    include_exhaustive_under: int = 0,
) -> CheckResult:
    rng = random.Random(seed)
    failures = 0
    runs = 0
    for i in range(n_graphs):
        graph = random_object_graph(rng, max_nodes=max_nodes)
        todo = list(strategies)
        if include_exhaustive_under and len(graph.nodes) - 1 <= include_exhaustive_under:
            todo.append("exhaustive")
        for strategy in todo:
            runs += 1
            if not roundtrip_once(graph, strategy, seed=i):
                failures += 1
    return CheckResult(
        "roundtrip", failures == 0,
        f"{runs} save/load cycles over {n_graphs} graphs, {failures} mismatches",
        {"runs": runs, "failures": failures},
    )


def check_eq1(n_tables: int = 10, seed: int = 11, span: int = 8192) -> CheckResult:
    rng = random.Random(seed)
    bad = 0
    for _ in range(n_tables):
        page_size = rng.choice((64, 128, 256, 512, 1024, 2048))
        n_pages = span // page_size + 1
        bases = rng.sample(range(0, 1 << 30, page_size), n_pages)
        table = VirtualMemoTable(page_size, {i: bases[i] for i in range(n_pages)})
        for m in range(span):
            expect = bases[m // page_size] + (m % page_size)
            if map_virtual_to_global(m, table) != expect:
                bad += 1
        for m in range(1 << 31, (1 << 31) + span):
            if map_virtual_to_global(m, table) != m - (1 << 31):
                bad += 1
    return CheckResult(
        "memo-mapping", bad == 0,
        f"{n_tables} tables x {2 * span} ids, {bad} mismatches",
        {"mismatches": bad},
    )


def check_supermodularity(
    n_triples: int = 1000, seed: int = 13, tol: float = 1e-9, max_nodes: int = 12
) -> CheckResult:
    rng = random.Random(seed)
    violations = 0
    done = 0
    while done < n_triples:
        graph, targets, sizes, lambdas, params = random_instance(rng, max_decisions=max_nodes - 1)
        order = first_visit_order(graph, targets, graph.root)
        edges = [oid for oid, parent in order if parent is not None]
        if not edges:
            continue

        def f(cut: Set[int]) -> float:
            return expected_cost(partition_from_cuts(order, cut), sizes, lambdas, params)

        for _ in range(min(20, n_triples - done)):
            b_set = {e for e in edges if rng.random() < 0.5}
            a_set = {e for e in b_set if rng.random() < 0.5}
            rest = [e for e in edges if e not in b_set]
            if not rest:
                continue
            e = rng.choice(rest)
            lhs = f(b_set | {e}) - f(b_set)
            rhs = f(a_set | {e}) - f(a_set)
            if lhs < rhs - tol:
                violations += 1
            done += 1
    return CheckResult(
        "supermodularity", violations == 0,
        f"{done} (A,B,e) triples, {violations} violations",
        {"triples": done, "violations": violations},
    )


@dataclass
class InstanceComparison:
    decisions: int
    lga_cost: float
    optimal_cost: float
    split_cost: float
    alpha: float

    @property
    def ratio(self) -> float:
        return self.lga_cost / self.optimal_cost if self.optimal_cost else 1.0


def compare_instance(rng: random.Random) -> InstanceComparison:
    graph, targets, sizes, lambdas, params = benchmark_instance(rng)
    lga_cost, _ = greedy_walk_cost(graph, targets, sizes, lambdas, params)
    _, optimal = exhaustive_optimal(
        graph, targets, sizes, lambdas, params, decision_cap=20, virtual_root=graph.root
    )
    return InstanceComparison(
        decisions=len(sizes) - 1,
        lga_cost=lga_cost,
        optimal_cost=optimal,
        split_cost=split_everything_cost(sizes, lambdas, params),
        alpha=approximation_alpha(sizes, lambdas, params),
    )


def check_near_optimality(
    n_instances: int = 50, seed: int = 17, max_ratio: float = 1.05, median_ratio: float = 1.01
) -> Tuple[CheckResult, List[InstanceComparison]]:
    """Greedy vs exhaustive on benchmark-shaped instances.

    The aggregate expected cost over the whole set must stay within
    ``max_ratio`` of the exhaustive optimum, and the per-instance ratio
    median within ``median_ratio`` (the greedy is one-pass: individual
    boundary instances can stray further, the experiment as a whole must
    not).
    """
    rng = random.Random(seed)
    comparisons = [compare_instance(rng) for _ in range(n_instances)]
    ratios = sorted(c.ratio for c in comparisons)
    aggregate = sum(c.lga_cost for c in comparisons) / sum(c.optimal_cost for c in comparisons)
    med = statistics.median(ratios)
    ok = aggregate <= max_ratio and med <= median_ratio
    return (
        CheckResult(
            "near-optimality", ok,
            f"{n_instances} instances, aggregate ratio {aggregate:.4f}, "
            f"median {med:.4f}, worst {ratios[-1]:.4f}",
            {"aggregate": aggregate, "median": med, "worst": ratios[-1]},
        ),
        comparisons,
    )


def check_greedy_bounds(
    comparisons: List[InstanceComparison], tol: float = 1e-9
) -> CheckResult:
    lemma_bad = sum(
        1 for c in comparisons if c.lga_cost > 0.5 * (c.optimal_cost + c.split_cost) + tol
    )
    alpha_bad = sum(
        1 for c in comparisons if c.lga_cost > (1 + c.alpha) * c.optimal_cost + tol
    )
    ok = lemma_bad == 0 and alpha_bad == 0
    return CheckResult(
        "greedy-bounds", ok,
        f"{len(comparisons)} instances, {lemma_bad} half-sum violations, "
        f"{alpha_bad} alpha-bound violations",
        {"lemma_violations": lemma_bad, "alpha_violations": alpha_bad},
    )


def check_dedup(seed: int = 23) -> CheckResult:
    from .bench import run_script
    from .workload import parse_script

    script = parse_script(
        "\n".join(
            [
                "make_lists data 5 4 32",
                "checkpoint",
                "read data",
                "checkpoint",
                "read data",
                "checkpoint",
            ]
        )
    )
    metrics, session = run_script(script, seed=seed)
    later = metrics.checkpoints[1:]
    zero_after_first = all(cp.pods_written == 0 for cp in later)
    within_capacity = (
        session.store.thesaurus.footprint_bytes <= session.store.thesaurus.capacity_bytes
    )
    ok = zero_after_first and within_capacity
    return CheckResult(
        "dedup", ok,
        f"later checkpoints wrote {[cp.pods_written for cp in later]} pods",
    )


def check_stability(n_workloads: int = 5, seed: int = 29) -> CheckResult:
    """Consecutive saves must apply identical actions to shared objects."""
    rng = random.Random(seed)
    mismatched = 0
    compared = 0
    for w in range(n_workloads):
        graph = ObjectGraph()
        backend = MemoryBackend()
        store = CheckpointStore(graph, backend, StoreConfig())
        n_vars = rng.randint(1, 3)
        for v in range(n_vars):
            leaves = [graph.new_leaf(rng.randbytes(24)) for _ in range(rng.randint(2, 6))]
            graph.bind(f"v{v}", graph.new_container(leaves))
        prev_actions: Dict[int, Action] = {}
        for step in range(4):
            store.save(set(graph.variables))
            actions = store.last_report.actions
            for oid, action in actions.items():
                if oid in prev_actions:
                    compared += 1
                    if prev_actions[oid] != action:
                        mismatched += 1
            prev_actions = actions
            victim = graph.nodes[graph.target(f"v{rng.randrange(n_vars)}")]
            for leaf_id in victim.children:
                graph.nodes[leaf_id].payload = rng.randbytes(24)
    return CheckResult(
        "stability", mismatched == 0,
        f"{compared} shared decisions compared, {mismatched} changed",
        {"compared": compared, "mismatched": mismatched},
    )


def random_statement(rng: random.Random, names: List[str]) -> Statement:
    name = rng.choice(names)
    roll = rng.random()
    if roll < 0.25:
        return Read(name)
    if roll < 0.45:
        return Sum(name)
    if roll < 0.6:
        return Head(name, rng.randint(0, 3))
    if roll < 0.75:
        return MutateFraction(name, rng.random(), rng.randrange(1 << 30))
    if roll < 0.9:
        return AppendLeaf(name, rng.randbytes(8))
    return Assign(rng.choice(names), name)


def check_ascc_precision(n_statements: int = 1000, seed: int = 31) -> CheckResult:
    """No statement judged static may change any variable's canonical bytes."""
    rng = random.Random(seed)
    graph = ObjectGraph()
    for v in range(3):
        leaves = [graph.new_leaf(rng.randbytes(16)) for _ in range(3)]
        graph.bind(f"v{v}", graph.new_container(leaves))
    names = sorted(graph.variables)
    false_positives = 0
    static_judged = 0
    actually_static = 0
    recalled = 0
    for i in range(n_statements):
        stmt = random_statement(rng, names)
        static = ascc_check(stmt)
        before = canonical_serialize(graph, set(names))
        execute_statement(graph, stmt, seed + i)
        after = canonical_serialize(graph, set(names))
        unchanged = before == after
        if static:
            static_judged += 1
            if not unchanged:
                false_positives += 1
        if unchanged:
            actually_static += 1
            if static:
                recalled += 1
    recall = recalled / actually_static if actually_static else 1.0
    return CheckResult(
        "ascc-precision", false_positives == 0,
        f"{static_judged} static judgments, {false_positives} false positives, "
        f"recall {recall:.2%} (reported, not asserted)",
        {"false_positives": false_positives, "recall": recall},
    )


@dataclass
class AtomicityTrial:
    consistent: bool
    inactive_wait_s: float
    active_wait_s: float
    save_wall_s: float
    save_done_when_active_ran: bool


def atomicity_trial(seed: int, write_delay_s: float = 0.05) -> AtomicityTrial:
    """Race allowed statements against a slowed save; load(t) must equal the
    pre-save snapshot."""
    rng = random.Random(seed)
    graph = ObjectGraph()
    backend = DelayInjectingBackend(MemoryBackend(), 0.0)
    store = CheckpointStore(graph, backend, StoreConfig(optimizer="split-all"))
    engine = AsyncSaveEngine(store)

    active_leaves = [graph.new_leaf(rng.randbytes(16)) for _ in range(3)]
    graph.bind("hot", graph.new_container(active_leaves))
    idle_leaves = [graph.new_leaf(rng.randbytes(16)) for _ in range(2)]
    graph.bind("cold", graph.new_container(idle_leaves))
    store.save({"hot", "cold"})  # prior PodGraph so the filter has components
    backend.write_delay_s = write_delay_s  # slow only the racing save

    snapshot = graph.clone()
    handle = engine.begin_async_save({"hot"})

    mutate_cold = MutateFraction("cold", 1.0, seed)
    inactive_wait = engine.wait_for_statement(mutate_cold)
    execute_statement(graph, mutate_cold, seed)

    read_hot = Sum("hot")
    static_wait = engine.wait_for_statement(read_hot)
    execute_statement(graph, read_hot, seed + 1)

    mutate_hot = MutateFraction("hot", 1.0, seed + 2)
    active_wait = engine.wait_for_statement(mutate_hot)
    save_done = handle.done()
    execute_statement(graph, mutate_hot, seed + 2)

    t = handle.join()
    loaded = store.load({"hot"}, t)
    consistent = canonical_serialize(loaded, {"hot"}) == canonical_serialize(
        snapshot, {"hot"}
    )
    return AtomicityTrial(
        consistent=consistent,
        inactive_wait_s=max(inactive_wait, static_wait),
        active_wait_s=active_wait,
        save_wall_s=handle.worker_s,
        save_done_when_active_ran=save_done,
    )


def check_atomicity(n_trials: int = 10, seed: int = 37, write_delay_s: float = 0.05) -> CheckResult:
    inconsistent = 0
    blocked_on_inactive = 0
    unblocked_on_active = 0
    for i in range(n_trials):
        trial = atomicity_trial(seed + i, write_delay_s)
        if not trial.consistent:
            inconsistent += 1
        if trial.inactive_wait_s > 0.25 * trial.save_wall_s:
            blocked_on_inactive += 1
        if not trial.save_done_when_active_ran:
            unblocked_on_active += 1
    ok = inconsistent == 0 and blocked_on_inactive == 0 and unblocked_on_active == 0
    return CheckResult(
        "async-atomicity", ok,
        f"{n_trials} trials, {inconsistent} inconsistent loads, "
        f"{blocked_on_inactive} blocked inactive stmts, "
        f"{unblocked_on_active} unblocked active mutations",
    )


def run_quick_suite(seed: int = 0) -> List[CheckResult]:
    """Trimmed-down property suite for the `verify` command."""
    results = [
        check_roundtrip(n_graphs=25, max_nodes=120, seed=seed + 7, include_exhaustive_under=10),
        check_eq1(n_tables=4, seed=seed + 11, span=2048),
        check_supermodularity(n_triples=300, seed=seed + 13),
    ]
    near, comparisons = check_near_optimality(n_instances=40, seed=seed + 17)
    results.append(near)
    results.append(check_greedy_bounds(comparisons))
    results.append(check_dedup(seed=seed + 23))
    results.append(check_stability(seed=seed + 29))
    results.append(check_ascc_precision(n_statements=400, seed=seed + 31))
    results.append(check_atomicity(n_trials=3, seed=seed + 37, write_delay_s=0.02))
    return results

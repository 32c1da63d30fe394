"""Deterministic workload script language.

One statement per line, ``#`` starts a comment. The grammar:

    make_lists NAME N_LISTS STRINGS_PER_LIST STRING_BYTES
    mutate_fraction NAME FRACTION SEED
    append_leaf NAME HEXBYTES
    assign DST SRC
    read NAME
    sum NAME
    head NAME K
    checkpoint
    load TIME_INDEX [NAME,NAME,...]

Randomness is MT19937 via ``random.Random``: leaf payloads come from
``rng.randbytes``; ``mutate_fraction`` picks ``ceil(fraction * n)`` child
lists with ``rng.sample(range(n), k)`` seeded by the statement's own seed.
Replaying a script with the same seeds is byte-for-byte deterministic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple, Union

from .errors import ParseError, UnknownVariable
from .graph import Kind, ObjectGraph, reachable_from


@dataclass(frozen=True)
class MakeLists:
    var: str
    n_lists: int
    strings_per_list: int
    string_bytes: int


@dataclass(frozen=True)
class MutateFraction:
    var: str
    fraction: float
    seed: int


@dataclass(frozen=True)
class AppendLeaf:
    var: str
    payload: bytes


@dataclass(frozen=True)
class Assign:
    dst: str
    src: str


@dataclass(frozen=True)
class Read:
    var: str


@dataclass(frozen=True)
class Sum:
    var: str


@dataclass(frozen=True)
class Head:
    var: str
    k: int


@dataclass(frozen=True)
class Checkpoint:
    pass


@dataclass(frozen=True)
class Load:
    time_index: int
    names: Tuple[str, ...]


Statement = Union[
    MakeLists, MutateFraction, AppendLeaf, Assign, Read, Sum, Head, Checkpoint, Load
]

MUTATING_TAGS = frozenset({"make_lists", "mutate_fraction", "append_leaf", "assign"})


def statement_tag(stmt: Statement) -> str:
    return {
        MakeLists: "make_lists",
        MutateFraction: "mutate_fraction",
        AppendLeaf: "append_leaf",
        Assign: "assign",
        Read: "read",
        Sum: "sum",
        Head: "head",
        Checkpoint: "checkpoint",
        Load: "load",
    }[type(stmt)]


@dataclass(frozen=True)
class Script:
    statements: Tuple[Statement, ...] = ()

    def __iter__(self):
        return iter(self.statements)

    def __len__(self):
        return len(self.statements)


def _parse_int(tok: str, lineno: int, what: str) -> int:
    try:
        value = int(tok)
    except ValueError:
        raise ParseError(lineno, f"{what} must be an integer, got {tok!r}") from None
    if value < 0:
        raise ParseError(lineno, f"{what} must be non-negative, got {value}")
    return value


def parse_script(text: str) -> Script:
    statements: List[Statement] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        op, args = tokens[0], tokens[1:]

        def need(n: int) -> None:
            if len(args) != n:
                raise ParseError(lineno, f"{op} takes {n} argument(s), got {len(args)}")

        if op == "make_lists":
            need(4)
            statements.append(
                MakeLists(
                    args[0],
                    _parse_int(args[1], lineno, "n_lists"),
                    _parse_int(args[2], lineno, "strings_per_list"),
                    _parse_int(args[3], lineno, "string_bytes"),
                )
            )
        elif op == "mutate_fraction":
            need(3)
            try:
                fraction = float(args[1])
            except ValueError:
                raise ParseError(lineno, f"fraction must be a float, got {args[1]!r}")
            if not 0.0 <= fraction <= 1.0:
                raise ParseError(lineno, f"fraction must be in [0, 1], got {fraction}")
            statements.append(
                MutateFraction(args[0], fraction, _parse_int(args[2], lineno, "seed"))
            )
        elif op == "append_leaf":
            need(2)
            try:
                payload = bytes.fromhex(args[1])
            except ValueError:
                raise ParseError(lineno, f"payload must be hex, got {args[1]!r}")
            statements.append(AppendLeaf(args[0], payload))
        elif op == "assign":
            need(2)
            statements.append(Assign(args[0], args[1]))
        elif op == "read":
            need(1)
            statements.append(Read(args[0]))
        elif op == "sum":
            need(1)
            statements.append(Sum(args[0]))
        elif op == "head":
            need(2)
            statements.append(Head(args[0], _parse_int(args[1], lineno, "k")))
        elif op == "checkpoint":
            need(0)
            statements.append(Checkpoint())
        elif op == "load":
            if not args:
                raise ParseError(lineno, "load takes a time index")
            time_index = _parse_int(args[0], lineno, "time_index")
            names: Tuple[str, ...] = ()
            if len(args) == 2:
                names = tuple(n for n in args[1].split(",") if n)
            elif len(args) > 2:
                raise ParseError(lineno, "load takes at most 2 arguments")
            statements.append(Load(time_index, names))
        else:
            raise ParseError(lineno, f"unknown statement {op!r}")
    return Script(tuple(statements))


def render_statement(stmt: Statement) -> str:
    if isinstance(stmt, MakeLists):
        return f"make_lists {stmt.var} {stmt.n_lists} {stmt.strings_per_list} {stmt.string_bytes}"
    if isinstance(stmt, MutateFraction):
        return f"mutate_fraction {stmt.var} {stmt.fraction!r} {stmt.seed}"
    if isinstance(stmt, AppendLeaf):
        return f"append_leaf {stmt.var} {stmt.payload.hex()}"
    if isinstance(stmt, Assign):
        return f"assign {stmt.dst} {stmt.src}"
    if isinstance(stmt, Read):
        return f"read {stmt.var}"
    if isinstance(stmt, Sum):
        return f"sum {stmt.var}"
    if isinstance(stmt, Head):
        return f"head {stmt.var} {stmt.k}"
    if isinstance(stmt, Checkpoint):
        return "checkpoint"
    if isinstance(stmt, Load):
        if stmt.names:
            return f"load {stmt.time_index} {','.join(stmt.names)}"
        return f"load {stmt.time_index}"
    raise TypeError(f"not a statement: {stmt!r}")


def render_script(script: Script) -> str:
    return "\n".join(render_statement(s) for s in script) + ("\n" if len(script) else "")


def accessed_variables(stmt: Statement) -> FrozenSet[str]:
    """Variable names a statement mentions. Checkpoint/load access nothing."""
    if isinstance(stmt, (MakeLists, MutateFraction, AppendLeaf, Read, Sum, Head)):
        return frozenset({stmt.var})
    if isinstance(stmt, Assign):
        return frozenset({stmt.dst, stmt.src})
    return frozenset()


@dataclass
class Effect:
    accessed: FrozenSet[str]
    mutated_objects: FrozenSet[int]
    value: Optional[object] = None


def execute_statement(ns: ObjectGraph, stmt: Statement, rng_seed: int = 0) -> Effect:
    """Apply one statement to the namespace.

    Checkpoint/load are no-ops here; the store session interprets them.
    Execution locality is asserted: everything mutated must be reachable
    from the accessed variables.
    """
    accessed = accessed_variables(stmt)
    mutated: FrozenSet[int] = frozenset()
    value: Optional[object] = None

    if isinstance(stmt, MakeLists):
        rng = random.Random(rng_seed)
        lists = []
        fresh = []
        for _ in range(stmt.n_lists):
            leaves = [ns.new_leaf(rng.randbytes(stmt.string_bytes)) for _ in range(stmt.strings_per_list)]
            lists.append(ns.new_container(leaves))
            fresh.extend(leaves)
        target = ns.new_container(lists)
        ns.bind(stmt.var, target)
        mutated = frozenset(fresh) | frozenset(lists) | {target}
    elif isinstance(stmt, MutateFraction):
        container = ns.nodes[ns.target(stmt.var)]
        n = len(container.children)
        k = math.ceil(stmt.fraction * n)
        rng = random.Random(stmt.seed)
        touched = set()
        if k:
            for idx in rng.sample(range(n), k):
                child = ns.nodes[container.children[idx]]
                if child.kind == Kind.CONTAINER:
                    for leaf_id in child.children:
                        leaf = ns.nodes[leaf_id]
                        leaf.payload = rng.randbytes(len(leaf.payload))
                        touched.add(leaf_id)
                else:
                    child.payload = rng.randbytes(len(child.payload))
                    touched.add(child.id)
        mutated = frozenset(touched)
    elif isinstance(stmt, AppendLeaf):
        container = ns.nodes[ns.target(stmt.var)]
        leaf = ns.new_leaf(stmt.payload)
        container.children.append(leaf)
        mutated = frozenset({container.id, leaf})
    elif isinstance(stmt, Assign):
        ns.bind(stmt.dst, ns.target(stmt.src))
    elif isinstance(stmt, Read):
        ns.target(stmt.var)
    elif isinstance(stmt, Sum):
        total = 0
        for oid in reachable_from(ns, {stmt.var}):
            node = ns.nodes[oid]
            if node.kind == Kind.LEAF:
                total += sum(node.payload)
        value = total
    elif isinstance(stmt, Head):
        node = ns.nodes[ns.target(stmt.var)]
        value = [ns.nodes[c].payload for c in node.children[: stmt.k] if ns.nodes[c].kind == Kind.LEAF]
    elif isinstance(stmt, (Checkpoint, Load)):
        pass
    else:
        raise TypeError(f"not a statement: {stmt!r}")

    if mutated and accessed:
        assert mutated <= reachable_from(ns, set(accessed)), (
            "execution locality violated: mutation escaped the accessed closure"
        )
    return Effect(accessed=accessed, mutated_objects=mutated, value=value)

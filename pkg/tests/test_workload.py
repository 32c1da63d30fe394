import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from podstore.errors import ParseError, UnknownVariable
from podstore.graph import ObjectGraph, canonical_serialize, reachable_from
from podstore.workload import (
    Assign,
    Checkpoint,
    Head,
    Load,
    MakeLists,
    MutateFraction,
    Read,
    Script,
    Sum,
    accessed_variables,
    execute_statement,
    parse_script,
    render_script,
)


class TestParse:
    def test_make_lists_line(self):
        script = parse_script("make_lists data 100 100000 100")
        assert script.statements == (MakeLists("data", 100, 100000, 100),)

    def test_empty_text(self):
        assert parse_script("") == Script(())

    def test_fraction_out_of_range(self):
        with pytest.raises(ParseError):
            parse_script("mutate_fraction data 1.5 0")

    def test_comments_and_blanks(self):
        script = parse_script("# a comment\n\nread x  # trailing\n")
        assert script.statements == (Read("x"),)

    def test_unknown_statement(self):
        with pytest.raises(ParseError) as err:
            parse_script("explode x")
        assert err.value.line == 1

    def test_load_with_names(self):
        script = parse_script("load 3 a,b")
        assert script.statements == (Load(3, ("a", "b")),)


STATEMENTS = st.one_of(
    st.builds(MakeLists, st.sampled_from(["a", "b"]), st.integers(0, 5),
              st.integers(0, 5), st.integers(0, 64)),
    st.builds(MutateFraction, st.sampled_from(["a", "b"]),
              st.floats(0, 1, allow_nan=False), st.integers(0, 2**31)),
    st.builds(Assign, st.sampled_from(["a", "b"]), st.sampled_from(["a", "b"])),
    st.builds(Read, st.sampled_from(["a", "b"])),
    st.builds(Sum, st.sampled_from(["a", "b"])),
    st.builds(Head, st.sampled_from(["a", "b"]), st.integers(0, 9)),
    st.just(Checkpoint()),
    st.builds(Load, st.integers(0, 9), st.tuples(st.sampled_from(["a", "b"]))),
)


@given(st.lists(STATEMENTS, max_size=12))
@settings(max_examples=100, deadline=None)
def test_render_parse_roundtrip(statements):
    script = Script(tuple(statements))
    assert parse_script(render_script(script)) == script


class TestAccessedVariables:
    def test_assign(self):
        assert accessed_variables(Assign("y", "x")) == {"x", "y"}

    def test_checkpoint(self):
        assert accessed_variables(Checkpoint()) == set()

    def test_head(self):
        assert accessed_variables(Head("df", 5)) == {"df"}

    def test_load_accesses_nothing(self):
        assert accessed_variables(Load(1, ("x",))) == set()


class TestExecute:
    def setup_method(self):
        self.g = ObjectGraph()
        execute_statement(self.g, MakeLists("data", 4, 3, 16), rng_seed=1)

    def test_zero_fraction_mutates_nothing(self):
        effect = execute_statement(self.g, MutateFraction("data", 0.0, 7))
        assert effect.mutated_objects == frozenset()

    def test_full_fraction_mutates_every_list(self):
        before = canonical_serialize(self.g, {"data"})
        effect = execute_statement(self.g, MutateFraction("data", 1.0, 7))
        lists = self.g.nodes[self.g.target("data")].children
        touched_lists = {
            lst for lst in lists
            if set(self.g.nodes[lst].children) & effect.mutated_objects
        }
        assert len(touched_lists) == 4
        assert canonical_serialize(self.g, {"data"}) != before

    def test_sum_is_read_only(self):
        effect = execute_statement(self.g, Sum("data"))
        assert effect.accessed == {"data"}
        assert effect.mutated_objects == frozenset()
        assert isinstance(effect.value, int)

    def test_locality_invariant(self):
        effect = execute_statement(self.g, MutateFraction("data", 0.5, 3))
        assert effect.mutated_objects <= reachable_from(self.g, {"data"})

    def test_unknown_variable(self):
        with pytest.raises(UnknownVariable):
            execute_statement(self.g, Read("ghost"))

    def test_assign_aliases(self):
        execute_statement(self.g, Assign("alias", "data"))
        assert self.g.target("alias") == self.g.target("data")


def test_replay_is_deterministic():
    def replay():
        g = ObjectGraph()
        marks = []
        script = parse_script(
            "\n".join(
                [
                    "make_lists data 3 2 8",
                    "checkpoint",
                    "mutate_fraction data 0.5 42",
                    "checkpoint",
                    "assign copy data",
                    "checkpoint",
                ]
            )
        )
        for i, stmt in enumerate(script):
            if isinstance(stmt, Checkpoint):
                marks.append(canonical_serialize(g, set(g.variables)))
            else:
                execute_statement(g, stmt, rng_seed=100 + i)
        return marks

    assert replay() == replay()

"""Mini-language lexer, parser, subtree multiset, and dataflow tests."""

from __future__ import annotations

import random

import pytest

from codelm.minilang import (
    AstNode,
    LexError,
    ParseError,
    dataflow,
    lex,
    parse,
    pretty_print,
    subtrees,
)
from gen_minilang import gen_program, oracle_dataflow


def test_lex_basic_kinds():
    toks = lex("a = b + 1 ;")
    assert [(t.kind, t.text) for t in toks] == [
        ("identifier", "a"),
        ("operator", "="),
        ("identifier", "b"),
        ("operator", "+"),
        ("integer", "1"),
        ("punctuation", ";"),
    ]


def test_lex_empty():
    assert lex("") == []


def test_lex_positions_strictly_increasing():
    toks = lex("if (x <= 10) { y = y + 1; } // tail\nreturn y;")
    positions = [t.position for t in toks]
    assert positions == sorted(positions)
    assert len(set(positions)) == len(positions)


def test_lex_maximal_munch():
    assert [t.text for t in lex("a<=b==c&&d")] == ["a", "<=", "b", "==", "c", "&&", "d"]


def test_lex_comments_dropped():
    toks = lex("a = 1; // comment\n/* block\ncomment */ b = 2;")
    assert [t.text for t in toks] == ["a", "=", "1", ";", "b", "=", "2", ";"]


def test_lex_string_literal():
    toks = lex('x = "a b\\"c" ;')
    assert toks[2].kind == "string"
    assert toks[2].text == '"a b\\"c"'


def test_lex_unknown_char_position():
    with pytest.raises(LexError) as exc:
        lex("a = @;")
    assert exc.value.position == 4


def test_lex_rejoin_round_trip():
    code = 'int f(int a) { if (a >= 2) { return a * 3; } s = "x y"; while (s != a) { g(s, 1); } }'
    toks = lex(code)
    again = lex(" ".join(t.text for t in toks))
    assert [(t.kind, t.text) for t in again] == [(t.kind, t.text) for t in toks]


def test_parse_assign_under_block():
    tree = parse("a = 1 ;")
    assert tree.kind == "Block"
    (assign,) = tree.children
    assert assign.kind == "Assign"
    assert assign.children[0] == AstNode("Name", "a")
    assert assign.children[1] == AstNode("Literal", "1")


def test_parse_error_position():
    with pytest.raises(ParseError) as exc:
        parse("a = ;")
    assert exc.value.position == 4


def test_parse_precedence():
    tree = parse("a = b + c * d ;")
    value = tree.children[0].children[1]
    assert value.kind == "BinOp" and value.text == "+"
    assert value.children[1].kind == "BinOp" and value.children[1].text == "*"


def test_parse_function_shape():
    tree = parse("int add(int a, int b) { return a + b; }")
    (fn,) = tree.children
    assert fn.kind == "Function"
    kinds = [c.kind for c in fn.children]
    assert kinds == ["Type", "Name", "Param", "Param", "Block"]


def test_parse_if_else_and_while():
    tree = parse("if (a < b) { a = b; } else { b = a; } while (a) { a = a - 1; }")
    assert [c.kind for c in tree.children] == ["If", "While"]
    assert len(tree.children[0].children) == 3


def test_parse_call_statement():
    tree = parse("f(a, 1 + 2);")
    (stmt,) = tree.children
    assert stmt.kind == "ExprStmt"
    assert stmt.children[0].kind == "Call"
    assert len(stmt.children[0].children) == 3  # callee + two args


def test_parse_rejects_out_of_subset():
    with pytest.raises(ParseError):
        parse("for (i = 0; i < n; i = i + 1) { }")
    with pytest.raises(ParseError):
        parse("int x = 1;")


def test_subtrees_single_assign():
    counts = subtrees(parse("a = 1 ;"))
    assert sum(counts.values()) == 4  # Block, Assign, Name, Literal
    assert counts["(Name var)"] == 1
    assert counts["(Literal lit)"] == 1
    assert counts["(Assign (Name var) (Literal lit))"] == 1


def test_subtrees_rename_invariant():
    left = subtrees(parse("total = base + 1 ; use(total);"))
    right = subtrees(parse("t = b + 9 ; use(t);"))
    assert left == right


def test_subtrees_size_equals_node_count():
    tree = parse("int f(int a) { if (a) { return a; } return 0; }")
    assert sum(subtrees(tree).values()) == sum(1 for _ in tree.walk())


def test_dataflow_single_edge():
    edges = dataflow(parse("a = 1 ; b = a + 2 ;"))
    assert edges == frozenset({(0, 1, "var")})


def test_dataflow_undefined_use():
    assert dataflow(parse("b = a ;")) == frozenset()


def test_dataflow_branch_union():
    code = "if (c) { a = 1; } else { a = 2; } b = a;"
    # statements: If@0, Assign@1 (then), Assign@2 (else), Assign@3
    assert dataflow(parse(code)) == frozenset({(1, 3, "var"), (2, 3, "var")})


def test_dataflow_kill_on_redefine():
    edges = dataflow(parse("a = 1 ; a = 2 ; b = a ;"))
    assert edges == frozenset({(1, 2, "var")})


def test_dataflow_self_reference_uses_prior_def():
    edges = dataflow(parse("a = 1 ; a = a + 1 ;"))
    assert edges == frozenset({(0, 1, "var")})


def test_dataflow_param_def():
    edges = dataflow(parse("int f(int a) { return a; }"))
    assert edges == frozenset({(0, 1, "var")})


def test_dataflow_while_no_back_edges():
    code = "a = 1; while (a < 10) { a = a + 1; } b = a;"
    # Assign@0, While@1, Assign@2, Assign@3
    edges = dataflow(parse(code))
    assert edges == frozenset({(0, 1, "var"), (0, 2, "var"), (0, 3, "var"), (2, 3, "var")})
    assert all(d < u for d, u, _ in edges)


def test_pretty_print_round_trip_examples():
    for code in [
        "a = 1 ;",
        "int f(int a, int b) { return a + b * 2; }",
        "if (a) { b = 1; } else { while (b) { b = b - 1; } }",
        "f();",
        "return;",
    ]:
        tree = parse(code)
        assert parse(pretty_print(tree)) == tree


def test_pretty_print_round_trip_random_trees():
    rng = random.Random(7)
    for _ in range(200):
        tree = gen_program(rng)
        assert parse(pretty_print(tree)) == tree


def test_dataflow_matches_oracle_random_trees():
    rng = random.Random(11)
    for _ in range(200):
        tree = gen_program(rng)
        assert dataflow(tree) == oracle_dataflow(tree)


def test_dataflow_edges_point_backward_random_trees():
    rng = random.Random(13)
    for _ in range(100):
        tree = gen_program(rng)
        assert all(d < u for d, u, _ in dataflow(tree))

import random

import pytest

from lyapguard.tools import FofLexError, FofParseError, FofSyntaxError, FofUnboundVariableError
from lyapguard.tools.fof import (
    FUNCTIONS,
    RELATIONS,
    Atom,
    BinOp,
    FofConjecture,
    Func,
    Neg,
    Num,
    Paren,
    Pow,
    Var,
    render,
    render_term,
)
from lyapguard.tools.fof.parser import parse, parse_term, tokenize
from lyapguard.tools.fof.utils import evaluate

NAMES = ("X", "Y", "Z_1", "Delta_E")

SIMPLE = """fof(simple,conjecture, ![X] : ?[Y] :
% assumptions
( X > 0 & Y = X
% implies
=> X+Y > 0 )).
"""


def test_tokenize_positions():
    tokens = tokenize("fof(a,\n  X >= 1.5)")
    ge = next(t for t in tokens if t.text == ">=")
    assert (ge.line, ge.column) == (2, 5)
    assert [t.kind for t in tokens if t.text in ("X", "1.5")] == ["UPPER", "NUMBER"]


def test_tokenize_drops_comments():
    tokens = tokenize("% a comment\nX")
    assert [t.text for t in tokens if t.kind != "EOF"] == ["X"]


def test_lex_error_position():
    with pytest.raises(FofLexError) as info:
        parse("fof(a,conjecture,\n ![X] : X # 1).")
    assert (info.value.line, info.value.column) == (2, 11)


def test_parse_simple_conjecture():
    conj = parse(SIMPLE)
    assert conj.name == "simple"
    assert conj.universal_vars == ("X",)
    assert conj.existential_vars == ("Y",)
    assert conj.hypotheses == (
        Atom(">", Var("X"), Num(0.0)),
        Atom("=", Var("Y"), Var("X")),
    )
    assert conj.conclusion == Atom(">", BinOp("+", Var("X"), Var("Y")), Num(0.0))
    assert render(conj) == SIMPLE


def test_parse_single_atom_without_implication():
    conj = parse("fof(t,conjecture, ![X] : X*X >= 0).")
    assert conj.hypothesis_lines == ()
    assert conj.conclusion.op == ">="


def test_hypothesis_lines_follow_source_lines():
    text = "fof(t,conjecture, ![X,Y] :\n( X > 0 & Y > 0\n& X < 1\n=> X+Y > 0 ))."
    conj = parse(text)
    assert [len(line) for line in conj.hypothesis_lines] == [2, 1]


def test_precedence_and_associativity():
    term = parse_term("X-Y-Z_1*2^3/4")
    assert term == BinOp(
        "-",
        BinOp("-", Var("X"), Var("Y")),
        BinOp("/", BinOp("*", Var("Z_1"), Pow(Num(2.0), 3)), Num(4.0)),
    )
    assert parse_term("-X^2") == Neg(Pow(Var("X"), 2))


def test_evaluate_parsed_term():
    term = parse_term("-(X+1)^2*sin(Y)+sqrt(abs(Z_1))/cos(0)")
    value = evaluate(term, {"X": 1.0, "Y": 0.5, "Z_1": -4.0})
    assert value == pytest.approx(-4.0 * 0.479425538604203 + 2.0)


def test_unbound_variable_reported_with_position():
    with pytest.raises(FofUnboundVariableError) as info:
        parse("fof(t,conjecture, ![X] :\n X < Y).")
    assert info.value.name == "Y"
    assert (info.value.line, info.value.column) == (2, 6)


def test_variable_bound_twice():
    with pytest.raises(FofSyntaxError, match="bound twice"):
        parse("fof(t,conjecture, ![X] : ?[X] : X > 0).")


def test_nested_implication_rejected():
    with pytest.raises(FofSyntaxError, match="nested implication"):
        parse("fof(t,conjecture, ![X] : (X > 0 => X > 1) & X < 2 => X < 3).")


def test_compound_conclusion_rejected():
    with pytest.raises(FofSyntaxError, match="single atom"):
        parse("fof(t,conjecture, ![X] : X > 0 => X > 1 & X < 2).")


def test_huge_literal_rejected():
    with pytest.raises(FofSyntaxError, match="out of range"):
        parse("fof(t,conjecture, ![X] : X < 1" + "0" * 400 + ").")


def test_unknown_function_rejected():
    with pytest.raises(FofSyntaxError) as info:
        parse("fof(t,conjecture, ![X] : tan(X) < 1).")
    assert info.value.column == 26


def test_function_arity():
    with pytest.raises(FofSyntaxError, match="one argument"):
        parse_term("sqrt(X,Y)")


def test_fractional_exponent_rejected():
    with pytest.raises(FofSyntaxError, match="integer exponent"):
        parse_term("X^1.5")


def test_missing_relation_position():
    with pytest.raises(FofSyntaxError) as info:
        parse("fof(t,conjecture, ![X] :\n( X > 0\n=> X+1 )).")
    assert info.value.line == 3


def test_trailing_input_rejected():
    with pytest.raises(FofSyntaxError):
        parse("fof(t,conjecture, ![X] : X > 0). extra")


def test_deep_nesting_is_a_syntax_error():
    depth = 5000
    text = "fof(t,conjecture, ![X] : " + "(" * depth + "X" + ")" * depth + " > 0)."
    with pytest.raises(FofSyntaxError, match="nesting too deep"):
        parse(text)


def test_parse_errors_share_a_base_class():
    for text in ("fof(t,conjecture, X # 1).", "fof(t,conjecture, X < ).", "fof(t,conjecture, X < 1)."):
        with pytest.raises(FofParseError):
            parse(text)


def _leaf(rng: random.Random):
    choice = rng.random()
    if choice < 0.4:
        return Var(rng.choice(NAMES))
    if choice < 0.8:
        return Num(round(rng.random() * 10 ** rng.randint(-4, 4), rng.randint(0, 8)))
    return Func(rng.choice(FUNCTIONS), (Var(rng.choice(NAMES)),))


def _primary(rng: random.Random, depth: int):
    """Terms that may stand as operands without extra parentheses."""
    if depth <= 0 or rng.random() < 0.3:
        return _leaf(rng)
    if rng.random() < 0.5:
        return Func(rng.choice(FUNCTIONS), (random_term(rng, depth - 1),))
    return Paren(random_term(rng, depth - 1))


def _operand(rng: random.Random, depth: int):
    roll = rng.random()
    base = _primary(rng, depth)
    if roll < 0.15:
        return Pow(base, rng.randint(0, 4))
    if roll < 0.3:
        return Neg(base)
    return base


def random_term(rng: random.Random, depth: int):
    term = _operand(rng, depth)
    for _ in range(rng.randint(0, 3)):
        term = BinOp(rng.choice("+-*/"), term, _operand(rng, depth))
        if isinstance(term.left, BinOp) and term.op in "*/" and term.left.op in "+-":
            term = BinOp(term.op, Paren(term.left), term.right)
    return term


def test_round_trip_fuzz():
    rng = random.Random(31337)
    for k in range(1000):
        hypotheses = tuple(
            tuple(
                Atom(rng.choice(RELATIONS), random_term(rng, 3), random_term(rng, 3))
                for _ in range(rng.randint(1, 3))
            )
            for _ in range(rng.randint(0, 3))
        )
        conj = FofConjecture(
            name=f"case_{k}",
            universal_vars=NAMES[:2],
            existential_vars=NAMES[2:],
            hypothesis_lines=hypotheses,
            conclusion=Atom(rng.choice(RELATIONS), random_term(rng, 3), Num(0.0)),
        )
        text = render(conj)
        assert parse(text) == conj, text
        assert render(parse(text)) == text


def test_term_round_trip_fuzz():
    rng = random.Random(7)
    for _ in range(1000):
        term = random_term(rng, 4)
        assert parse_term(render_term(term)) == term

"""
Lexer and recursive-descent parser for the conjecture subset written by `render`.

    conjecture := 'fof' '(' name ',' 'conjecture' ',' prefix* formula ')' '.'
    prefix     := ('!' | '?') '[' VAR (',' VAR)* ']' ':'
    formula    := conj ('=>' conj)?
    conj       := unit ('&' unit)*
    unit       := '(' formula ')' | atom
    atom       := term REL term
    term       := product (('+' | '-') product)*
    product    := unary (('*' | '/') unary)*
    unary      := '-' unary | power
    power      := primary ('^' INT)?
    primary    := NUMBER | VAR | FUNC '(' term (',' term)* ')' | '(' term ')'

`%` starts a comment running to the end of the line.
"""

import re
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

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
    Term,
    Var,
)

_TOKEN = re.compile(
    r"(?P<WS>[ \t\r\n]+)"
    r"|(?P<COMMENT>%[^\n]*)"
    r"|(?P<NUMBER>\d+(?:\.\d+)?)"
    r"|(?P<UPPER>[A-Z][A-Za-z0-9_]*)"
    r"|(?P<LOWER>[a-z][A-Za-z0-9_]*)"
    r"|(?P<OP>=>|<=|>=|!=|[=<>()\[\],:.!?&+\-*/^])"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> List[Token]:
    """Splits text into tokens, dropping whitespace and comments.

    Raises:
        FofLexError: At the first character no token starts with.
    """
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise FofLexError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup
        value = match.group()
        if kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind, value, line, pos - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = match.start() + value.rindex("\n") + 1
        pos = match.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


@dataclass
class _Conj:
    atoms: List[Union[Tuple[Atom, int], "_Impl"]]


@dataclass
class _Impl:
    left: _Conj
    right: _Conj
    token: Token


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.refs: List[Token] = []

    # token helpers

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "OP" and tok.text == text

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def fail(self, message: str, tok: Optional[Token] = None) -> FofSyntaxError:
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        return FofSyntaxError(f"{message}, found {found}", tok.line, tok.column)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.fail(f"expected '{text}'")
        return self.advance()

    def expect_word(self, word: str) -> Token:
        tok = self.peek()
        if tok.kind != "LOWER" or tok.text != word:
            raise self.fail(f"expected '{word}'")
        return self.advance()

    # conjecture level

    def conjecture(self) -> FofConjecture:
        self.expect_word("fof")
        self.expect("(")
        name = self.peek()
        if name.kind not in ("UPPER", "LOWER"):
            raise self.fail("expected conjecture name")
        self.advance()
        self.expect(",")
        self.expect_word("conjecture")
        self.expect(",")

        universal: List[Token] = []
        existential: List[Token] = []
        if self.at("!"):
            self.advance()
            universal = self.binder()
        if self.at("?"):
            self.advance()
            existential = self.binder()
        seen = set()
        for tok in universal + existential:
            if tok.text in seen:
                raise FofSyntaxError(f"variable {tok.text} bound twice", tok.line, tok.column)
            seen.add(tok.text)

        tree = self.formula()
        self.expect(")")
        self.expect(".")
        if self.peek().kind != "EOF":
            raise self.fail("expected end of input")

        for ref in self.refs:
            if ref.text not in seen:
                raise FofUnboundVariableError(ref.text, ref.line, ref.column)

        hypotheses, conclusion = _normalise(tree)
        lines: List[List[Atom]] = []
        last_line = None
        for atom, line in hypotheses:
            if line != last_line:
                lines.append([])
                last_line = line
            lines[-1].append(atom)
        try:
            return FofConjecture(
                name=name.text,
                universal_vars=tuple(t.text for t in universal),
                existential_vars=tuple(t.text for t in existential),
                hypothesis_lines=tuple(tuple(line) for line in lines),
                conclusion=conclusion,
            )
        except ValueError as e:
            raise FofSyntaxError(str(e), name.line, name.column) from e

    def binder(self) -> List[Token]:
        self.expect("[")
        names = [self.variable_token()]
        while self.at(","):
            self.advance()
            names.append(self.variable_token())
        self.expect("]")
        self.expect(":")
        return names

    def variable_token(self) -> Token:
        tok = self.peek()
        if tok.kind != "UPPER":
            raise self.fail("expected variable")
        return self.advance()

    # formula level

    def formula(self) -> Union[_Conj, _Impl]:
        left = self.conj()
        if self.at("=>"):
            arrow = self.advance()
            return _Impl(left, self.conj(), arrow)
        return left

    def conj(self) -> _Conj:
        items = self.unit()
        while self.at("&"):
            self.advance()
            items = items + self.unit()
        return _Conj(items)

    def unit(self) -> List[Union[Tuple[Atom, int], _Impl]]:
        if self.at("("):
            saved, saved_refs = self.pos, len(self.refs)
            try:
                self.advance()
                inner = self.formula()
                self.expect(")")
                return list(inner.atoms) if isinstance(inner, _Conj) else [inner]
            except FofSyntaxError as grouped:
                self.pos = saved
                del self.refs[saved_refs:]
                try:
                    return [self.atom()]
                except FofSyntaxError as plain:
                    raise max(grouped, plain, key=lambda e: (e.line, e.column))
        return [self.atom()]

    def atom(self) -> Tuple[Atom, int]:
        first = self.peek()
        lhs = self.term()
        tok = self.peek()
        if tok.kind != "OP" or tok.text not in RELATIONS:
            raise self.fail("expected relation")
        self.advance()
        rhs = self.term()
        return Atom(tok.text, lhs, rhs), first.line

    # term level

    def term(self) -> Term:
        left = self.product()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = BinOp(op, left, self.product())
        return left

    def product(self) -> Term:
        left = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Term:
        if self.at("-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Term:
        base = self.primary()
        if self.at("^"):
            self.advance()
            tok = self.peek()
            if tok.kind != "NUMBER" or not tok.text.isdigit():
                raise self.fail("expected integer exponent")
            self.advance()
            return Pow(base, int(tok.text))
        return base

    def primary(self) -> Term:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            value = float(tok.text)
            if value == float("inf"):
                raise FofSyntaxError("numeric literal out of range", tok.line, tok.column)
            return Num(value)
        if tok.kind == "UPPER":
            self.advance()
            self.refs.append(tok)
            return Var(tok.text)
        if tok.kind == "LOWER":
            if tok.text not in FUNCTIONS:
                raise self.fail("expected one of " + ", ".join(FUNCTIONS), tok)
            self.advance()
            self.expect("(")
            args = [self.term()]
            while self.at(","):
                self.advance()
                args.append(self.term())
            self.expect(")")
            if len(args) != 1:
                raise FofSyntaxError(f"{tok.text} takes one argument, got {len(args)}", tok.line, tok.column)
            return Func(tok.text, tuple(args))
        if self.at("("):
            self.advance()
            inner = self.term()
            self.expect(")")
            return Paren(inner)
        raise self.fail("expected term")


def _flatten(conj: _Conj) -> List[Tuple[Atom, int]]:
    atoms = []
    for item in conj.atoms:
        if isinstance(item, _Impl):
            raise FofSyntaxError("nested implication is not supported", item.token.line, item.token.column)
        atoms.append(item)
    return atoms


def _normalise(tree: Union[_Conj, _Impl]) -> Tuple[List[Tuple[Atom, int]], Atom]:
    """Reduces the formula tree to (hypotheses, conclusion)."""
    while isinstance(tree, _Conj) and len(tree.atoms) == 1 and isinstance(tree.atoms[0], _Impl):
        tree = tree.atoms[0]
    if isinstance(tree, _Impl):
        hypotheses = _flatten(tree.left)
        conclusion = _flatten(tree.right)
        if len(conclusion) != 1:
            raise FofSyntaxError(
                "the conclusion must be a single atom", tree.token.line, tree.token.column
            )
        return hypotheses, conclusion[0][0]
    atoms = _flatten(tree)
    if len(atoms) != 1:
        raise FofSyntaxError("a formula without '=>' must be a single atom", 1, 1)
    return [], atoms[0][0]


def parse(text: str) -> FofConjecture:
    """Parses one conjecture.

    Raises:
        FofLexError: On characters outside the token set.
        FofSyntaxError: On token sequences outside the grammar.
        FofUnboundVariableError: On a variable no quantifier binds.
    """
    try:
        return _Parser(text).conjecture()
    except RecursionError:
        raise FofSyntaxError("nesting too deep", 1, 1)


def parse_term(text: str) -> Term:
    """Parses a standalone term (variables need no binding)."""
    try:
        parser = _Parser(text)
        term = parser.term()
        if parser.peek().kind != "EOF":
            raise parser.fail("expected end of term")
        return term
    except RecursionError:
        raise FofSyntaxError("nesting too deep", 1, 1)


__all__ = ["FofParseError", "Token", "parse", "parse_term", "tokenize"]

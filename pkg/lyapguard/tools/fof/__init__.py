"""
First-order stability conjectures in TPTP FOF syntax.

Terms are kept as a concrete-syntax tree: grouping parentheses are explicit
`Paren` nodes and the renderer never inserts any, so rendering and parsing
are exact inverses on everything the builders and the parser produce.
"""

import errno
import os
import re
import subprocess
import tempfile
import time
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import tenacity
from pydantic import BaseModel
from tenacity import retry_if_exception, stop_after_attempt, wait_fixed

from lyapguard import logging
from lyapguard.tools import ProverUnavailableError, TheoremProver
from lyapguard.tools.controller import RobustBounds, VBoundTemplate
from lyapguard.tools.utils import as_vector, format_decimal

VARIABLE_NAME = re.compile(r"^[A-Z][A-Za-z0-9_]*$")
FUNCTIONS = ("abs", "sqrt", "sin", "cos")
RELATIONS = ("=", "!=", "<", "<=", ">", ">=")
ANGLE_BOUND = 1.5708

UNIVERSAL_VARS = ("E_1", "E_2", "E_3", "E_4", "E_5", "E_6", "Phi", "Theta")
EXISTENTIAL_VARS = ("V_1", "V_2", "V_3", "Delta_E")


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        if not (self.value >= 0.0 and self.value != float("inf")):
            raise ValueError(f"numeric literal must be finite and non-negative, got {self.value}")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Func:
    name: str
    args: Tuple["Term", ...]


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Neg:
    operand: "Term"


@dataclass(frozen=True)
class Pow:
    base: "Term"
    exponent: int


@dataclass(frozen=True)
class Paren:
    inner: "Term"


Term = Union[Num, Var, Func, BinOp, Neg, Pow, Paren]


@dataclass(frozen=True)
class Atom:
    op: str
    lhs: Term
    rhs: Term


def term_variables(term: Term) -> Iterator[str]:
    """Variable names in left-to-right order (with repetitions)."""
    if isinstance(term, Var):
        yield term.name
    elif isinstance(term, Func):
        for arg in term.args:
            yield from term_variables(arg)
    elif isinstance(term, BinOp):
        yield from term_variables(term.left)
        yield from term_variables(term.right)
    elif isinstance(term, (Neg, Paren)):
        yield from term_variables(term.operand if isinstance(term, Neg) else term.inner)
    elif isinstance(term, Pow):
        yield from term_variables(term.base)


def atom_variables(atom: Atom) -> Iterator[str]:
    yield from term_variables(atom.lhs)
    yield from term_variables(atom.rhs)


@dataclass(frozen=True)
class FofConjecture:
    """One `fof(name, conjecture, ...)` statement.

    Hypotheses are grouped in lines; the grouping only affects layout.
    """

    name: str
    universal_vars: Tuple[str, ...]
    existential_vars: Tuple[str, ...]
    hypothesis_lines: Tuple[Tuple[Atom, ...], ...]
    conclusion: Atom

    def __post_init__(self):
        if not re.match(r"^[A-Za-z][A-Za-z0-9_]*$", self.name):
            raise ValueError(f"invalid conjecture name {self.name!r}")
        bound = self.universal_vars + self.existential_vars
        for var in bound:
            if not VARIABLE_NAME.match(var):
                raise ValueError(f"invalid variable name {var!r}")
        if len(set(bound)) != len(bound):
            raise ValueError(f"variables bound twice in {bound}")
        if any(len(line) == 0 for line in self.hypothesis_lines):
            raise ValueError("hypothesis lines must not be empty")
        for atom in self.hypotheses + (self.conclusion,):
            for name in atom_variables(atom):
                if name not in bound:
                    raise ValueError(f"unbound variable {name}")

    @property
    def hypotheses(self) -> Tuple[Atom, ...]:
        return tuple(atom for line in self.hypothesis_lines for atom in line)


def _spaced(left: Term, right: Term) -> bool:
    if not isinstance(right, Paren):
        return False
    return isinstance(left, Paren) or (isinstance(left, BinOp) and left.op in "*/")


def render_term(term: Term) -> str:
    """Canonical text of a term.

    '+' and '-' are spaced when the right operand is parenthesised and the
    left one is parenthesised or a product or quotient. Every other binary
    operator is unspaced.
    """
    if isinstance(term, Num):
        return format_decimal(term.value)
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Func):
        return f"{term.name}({','.join(render_term(a) for a in term.args)})"
    if isinstance(term, BinOp):
        left, right = render_term(term.left), render_term(term.right)
        if term.op in "+-" and _spaced(term.left, term.right):
            return f"{left} {term.op} {right}"
        return f"{left}{term.op}{right}"
    if isinstance(term, Neg):
        return f"-{render_term(term.operand)}"
    if isinstance(term, Pow):
        return f"{render_term(term.base)}^{term.exponent}"
    if isinstance(term, Paren):
        return f"({render_term(term.inner)})"
    raise TypeError(f"not a term: {term!r}")


def render_atom(atom: Atom) -> str:
    return f"{render_term(atom.lhs)} {atom.op} {render_term(atom.rhs)}"


def render(conj: FofConjecture) -> str:
    """TPTP text of the conjecture, newline terminated."""
    prefix = []
    if conj.universal_vars:
        prefix.append(f"![{','.join(conj.universal_vars)}] :")
    if conj.existential_vars:
        prefix.append(f"?[{','.join(conj.existential_vars)}] :")
    header = " ".join([f"fof({conj.name},conjecture,"] + prefix)
    lines = [header]
    if conj.hypothesis_lines:
        lines.append("% assumptions")
        for i, line in enumerate(conj.hypothesis_lines):
            lead = "( " if i == 0 else "& "
            lines.append(lead + " & ".join(render_atom(a) for a in line))
        lines.append("% implies")
        lines.append(f"=> {render_atom(conj.conclusion)} )).")
    else:
        lines.append(f"( {render_atom(conj.conclusion)} )).")
    return "\n".join(lines) + "\n"


def _num(value: float) -> Term:
    value = float(value)
    return Neg(Num(-value)) if value < 0.0 else Num(value)


def _times(coef: float, term: Term) -> Paren:
    return Paren(BinOp("*", _num(coef), term))


def _abs(name: str) -> Func:
    return Func("abs", (Var(name),))


def v_bound_term(template: VBoundTemplate, axis: int) -> Paren:
    """(xi*(H+(a_i*abs(E_(i+3)))+(b_i*abs(E_i))) + (beta_max*(S+D))) for axis 0, 1 or 2."""
    inner = BinOp(
        "+",
        BinOp("+", _num(template.H), _times(template.a[axis], _abs(f"E_{axis + 4}"))),
        _times(template.b[axis], _abs(f"E_{axis + 1}")),
    )
    first = BinOp("*", _num(template.xi), Paren(inner))
    second = _times(template.beta_max, Paren(BinOp("+", _num(template.S), _num(template.D))))
    return Paren(BinOp("+", first, second))


def delta_bound_term(beta_min: float) -> Term:
    squares = BinOp(
        "+",
        BinOp("+", Pow(Var("V_1"), 2), Pow(Var("V_2"), 2)),
        Pow(Var("V_3"), 2),
    )
    return BinOp("/", Func("sqrt", (squares,)), _num(beta_min))


def emit_conjecture(
    bounds: RobustBounds,
    template: VBoundTemplate,
    E: Sequence[float],
    vdot: Term,
    name: str,
) -> FofConjecture:
    """Builds the stability conjecture for one error state.

    Args:
        bounds (RobustBounds): Supplies beta_min for the Delta_E hypothesis.
        template (VBoundTemplate): Per-axis bound coefficients for |V_i|.
        E (Sequence[float]): Error-state instance, six finite values.
        vdot (Term): V_dot expression over E_i, V_i, Delta_E, Phi, Theta.
        name (str): Conjecture name.

    Returns:
        FofConjecture: `assumptions => vdot < 0`.

    Raises:
        TemplateError: If the template coefficients are invalid.
        ValueError: If E is malformed or vdot uses an unknown variable.
    """
    template.check()
    E = as_vector(E, 6, "E")
    equalities = tuple(Atom("=", Var(f"E_{i + 1}"), _num(e)) for i, e in enumerate(E))
    angles = tuple(
        Atom(op, Var(var), _num(sign * ANGLE_BOUND))
        for var in ("Phi", "Theta")
        for op, sign in ((">", -1.0), ("<", 1.0))
    )
    v_lines = tuple(
        (Atom("<=", _abs(f"V_{i + 1}"), v_bound_term(template, i)),) for i in range(3)
    )
    delta = (
        Atom(">", Var("Delta_E"), Num(0.0)),
        Atom(">=", Var("Delta_E"), delta_bound_term(bounds.beta_min)),
    )
    conj = FofConjecture(
        name=name,
        universal_vars=UNIVERSAL_VARS,
        existential_vars=EXISTENTIAL_VARS,
        hypothesis_lines=(equalities, angles) + v_lines + (delta,),
        conclusion=Atom("<", vdot, Num(0.0)),
    )
    logging.info(f"Emitted conjecture {name} for E={E.tolist()}")
    return conj


class SzsStatus(str, Enum):
    THEOREM = "Theorem"
    COUNTER_SATISFIABLE = "CounterSatisfiable"
    GAVE_UP = "GaveUp"
    TIMEOUT = "Timeout"
    ERROR = "Error"


class SzsResult(BaseModel):
    status: SzsStatus
    raw: str = ""
    wall_time: float = 0.0


SZS_LINE = re.compile(r"SZS status\s+(\w+)")
KNOWN_STATUSES: Dict[str, SzsStatus] = {s.value: s for s in SzsStatus}


def parse_szs_status(output: str) -> SzsStatus:
    """Status from the first `SZS status <word>` line; unknown or missing words map to Error."""
    match = SZS_LINE.search(output or "")
    if match is None:
        return SzsStatus.ERROR
    return KNOWN_STATUSES.get(match.group(1), SzsStatus.ERROR)


def _text_file_busy(exc: BaseException) -> bool:
    return isinstance(exc, OSError) and exc.errno == errno.ETXTBSY


def _spawn(cmd: List[str], timeout: float) -> subprocess.CompletedProcess:
    retryer = tenacity.Retrying(
        retry=retry_if_exception(_text_file_busy),
        wait=wait_fixed(0.05),
        stop=stop_after_attempt(3),
        reraise=True,
    )
    return retryer(
        subprocess.run, cmd, capture_output=True, text=True, timeout=timeout, check=False
    )


def run_prover(
    prover: str,
    conj: FofConjecture,
    timeout: float,
    extra_args: Optional[Sequence[str]] = None,
) -> SzsResult:
    """Runs an external prover on the rendered conjecture.

    The problem file path is the last argument. Standard output and error are
    both kept in `raw`.

    Args:
        prover (str): Prover executable.
        conj (FofConjecture): Conjecture to prove.
        timeout (float): Wall-clock budget in seconds.
        extra_args (Optional[Sequence[str]]): Flags placed before the problem path.

    Returns:
        SzsResult: Parsed status, raw output and wall time.

    Raises:
        ProverUnavailableError: If the executable is missing or not executable.
    """
    fd, path = tempfile.mkstemp(prefix="lyapguard_", suffix=".p")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(render(conj))
        cmd = [prover, *(extra_args or []), path]
        logging.info(f"Running prover: {' '.join(cmd)} (timeout {timeout}s)")
        started = time.monotonic()
        try:
            result = _spawn(cmd, timeout)
        except subprocess.TimeoutExpired as e:
            elapsed = time.monotonic() - started
            raw = e.stdout.decode("utf-8", "replace") if isinstance(e.stdout, bytes) else (e.stdout or "")
            logging.warning(f"Prover timed out after {elapsed:.3f}s")
            return SzsResult(status=SzsStatus.TIMEOUT, raw=raw, wall_time=elapsed)
        except (FileNotFoundError, PermissionError) as e:
            logging.error(f"Prover {prover} cannot be started: {e}")
            raise ProverUnavailableError(f"cannot execute prover '{prover}': {e}") from e
        except OSError as e:
            logging.error(f"Prover {prover} failed to spawn: {e}")
            raise ProverUnavailableError(f"cannot execute prover '{prover}': {e}") from e
        elapsed = time.monotonic() - started
        raw = (result.stdout or "") + (result.stderr or "")
        status = parse_szs_status(result.stdout or "")
        logging.info(f"Prover finished in {elapsed:.3f}s with status {status.value}")
        logging.debug(f"Prover output:\n{raw}")
        return SzsResult(status=status, raw=raw, wall_time=elapsed)
    finally:
        try:
            os.unlink(path)
        except OSError:
            pass


class MetiTarskiProver(TheoremProver):
    """MetiTarski (or any SZS-reporting prover) run as a subprocess."""

    def prove(self, conjecture: FofConjecture, timeout: float) -> SzsResult:
        return run_prover(self.executable, conjecture, timeout, self.extra_args)

"""V_dot for the stability conjecture, and a numeric evaluator for FOF terms."""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lyapguard import logging
from lyapguard.tools.controller import RobustBounds, VBoundTemplate
from lyapguard.tools.dynamics import PlantParams
from lyapguard.tools.fof import (
    BinOp,
    FofConjecture,
    Func,
    Neg,
    Num,
    Paren,
    Pow,
    Term,
    Var,
    emit_conjecture,
)
from lyapguard.tools.lyapunov import Branch, LyapunovCert

LITERAL_DIGITS = 12
DROP_RELATIVE = 1e-12


def _literal(value: float) -> float:
    """Rounds to LITERAL_DIGITS significant digits."""
    return float(f"{value:.{LITERAL_DIGITS}g}")


def _chain(op: str, factors: List[Term]) -> Term:
    out = factors[0]
    for f in factors[1:]:
        out = BinOp(op, out, f)
    return out


def _signed_sum(items: List[Tuple[float, List[Term]]]) -> Term:
    """Left-associated sum of `coef * factors`; unit magnitudes are omitted."""
    out: Optional[Term] = None
    for coef, factors in items:
        magnitude = abs(coef)
        parts = list(factors) if magnitude == 1.0 else [Num(magnitude)] + list(factors)
        if out is None:
            if coef < 0.0:
                parts[0] = Neg(parts[0])
            out = _chain("*", parts)
        else:
            out = BinOp("-" if coef < 0.0 else "+", out, _chain("*", parts))
    return out if out is not None else Num(0.0)


def _power(name: str) -> Term:
    return Pow(Var(name), 2)


def nominal_term(P: np.ndarray) -> Term:
    """-Eᵀ P E as E_i^2 and E_i*E_j monomials in (i <= j) order."""
    items = []
    for i in range(6):
        for j in range(i, 6):
            coef = P[i, i] if i == j else P[i, j] + P[j, i]
            coef = _literal(coef)
            if coef == 0.0:
                continue
            factors = [_power(f"E_{i + 1}")] if i == j else [Var(f"E_{i + 1}"), Var(f"E_{j + 1}")]
            items.append((-coef, factors))
    return _signed_sum(items)


def w_terms(cert: LyapunovCert) -> List[Paren]:
    """(w_i) = (Bᵀ Q E)_i with entries below DROP_RELATIVE of the row maximum dropped."""
    BQ = cert.B.T @ cert.Q
    out = []
    for row in BQ:
        largest = float(np.max(np.abs(row)))
        items = [
            (_literal(c), [Var(f"E_{j + 1}")])
            for j, c in enumerate(row)
            if c != 0.0 and abs(c) >= DROP_RELATIVE * largest
        ]
        out.append(Paren(_signed_sum(items)))
    return out


def _trig(name: str, var: str) -> Func:
    return Func(name, (Var(var),))


def rotated_w(w: List[Paren]) -> Tuple[Term, Term, Term]:
    """Components of W⁻ᵀ w, W⁻¹ the Euler-rate matrix with tan written as sin/cos."""
    s_phi, c_phi = _trig("sin", "Phi"), _trig("cos", "Phi")
    s_theta, c_theta = _trig("sin", "Theta"), _trig("cos", "Theta")
    u1 = BinOp(
        "+",
        BinOp(
            "+",
            BinOp("*", BinOp("/", BinOp("*", s_phi, s_theta), c_theta), w[0]),
            BinOp("*", c_phi, w[1]),
        ),
        BinOp("*", BinOp("/", s_phi, c_theta), w[2]),
    )
    u2 = BinOp(
        "+",
        BinOp(
            "-",
            BinOp("*", BinOp("/", BinOp("*", c_phi, s_theta), c_theta), w[0]),
            BinOp("*", s_phi, w[1]),
        ),
        BinOp("*", BinOp("/", c_phi, c_theta), w[2]),
    )
    return w[0], Paren(u1), Paren(u2)


def vdot_expression(
    cert: LyapunovCert, plant: PlantParams, sigma: float, branch: Branch
) -> Term:
    """V_dot over the free variables E_i, V_i, Delta_E, Phi, Theta.

    With w = Bᵀ Q E and u = W⁻ᵀ w the robust term enters as Delta_E w / ‖w‖
    outside the boundary layer and as Delta_E w / sigma inside it, so

        outside:        -Eᵀ P E + 2 wᵀ V - 2 Delta_E uᵀ M⁻¹ u / sqrt(wᵀ w)
        boundary-layer: -Eᵀ P E + 2 wᵀ V - 2 Delta_E uᵀ M⁻¹ u / sigma

    The w_i stay grouped in parentheses; Q and the inertias are printed to
    LITERAL_DIGITS significant digits.

    Args:
        cert (LyapunovCert): Supplies P, Q and B.
        plant (PlantParams): Supplies the body inertias M.
        sigma (float): Boundary-layer width.
        branch (Branch): Which robust-term form to encode.

    Returns:
        Term: The expression tree.

    Raises:
        ValueError: If sigma is not finite and positive on the boundary-layer branch.
    """
    branch = Branch(branch)
    w = w_terms(cert)
    expr = nominal_term(cert.P)
    for i, w_i in enumerate(w):
        expr = BinOp("+", expr, BinOp("*", BinOp("*", Num(2.0), w_i), Var(f"V_{i + 1}")))

    quad = None
    for u_i, inertia in zip(rotated_w(w), plant.body_inertia):
        term = BinOp("/", Pow(u_i, 2), Num(_literal(inertia)))
        quad = term if quad is None else BinOp("+", quad, term)

    if branch is Branch.BOUNDARY_LAYER:
        if not (sigma > 0.0 and math.isfinite(sigma)):
            raise ValueError(f"sigma must be finite and positive, got {sigma}")
        divisor: Term = Num(sigma)
    else:
        norm = BinOp("+", BinOp("+", Pow(w[0], 2), Pow(w[1], 2)), Pow(w[2], 2))
        divisor = Func("sqrt", (norm,))
    robust = BinOp("/", BinOp("*", BinOp("*", Num(2.0), Var("Delta_E")), Paren(quad)), divisor)
    expr = BinOp("-", expr, robust)
    logging.debug(f"Built {branch.value} V_dot expression")
    return expr


def stability_conjecture(
    bounds: RobustBounds,
    template: VBoundTemplate,
    cert: LyapunovCert,
    plant: PlantParams,
    E: Sequence[float],
    branch: Branch = Branch.OUTSIDE,
    name: Optional[str] = None,
) -> FofConjecture:
    """The conjecture `assumptions => V_dot < 0` for one error state and branch.

    The name defaults to the branch's conjecture name.
    """
    branch = Branch(branch)
    vdot = vdot_expression(cert, plant, bounds.sigma, branch)
    return emit_conjecture(bounds, template, E, vdot, name or branch.conjecture_name)


_FUNCS = {"abs": abs, "sqrt": math.sqrt, "sin": math.sin, "cos": math.cos}


def evaluate(term: Term, env: Dict[str, float]) -> float:
    """Numeric value of a term.

    Raises:
        KeyError: On a variable missing from env.
        ValueError: On a domain error (sqrt of a negative, division by zero).
    """
    if isinstance(term, Num):
        return term.value
    if isinstance(term, Var):
        return float(env[term.name])
    if isinstance(term, Paren):
        return evaluate(term.inner, env)
    if isinstance(term, Neg):
        return -evaluate(term.operand, env)
    if isinstance(term, Pow):
        return evaluate(term.base, env) ** term.exponent
    if isinstance(term, Func):
        return float(_FUNCS[term.name](*[evaluate(a, env) for a in term.args]))
    if isinstance(term, BinOp):
        left, right = evaluate(term.left, env), evaluate(term.right, env)
        if term.op == "+":
            return left + right
        if term.op == "-":
            return left - right
        if term.op == "*":
            return left * right
        if right == 0.0:
            raise ValueError("division by zero")
        return left / right
    raise TypeError(f"not a term: {term!r}")

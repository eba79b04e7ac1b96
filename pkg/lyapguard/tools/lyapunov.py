"""
Closed-loop error system and its quadratic Lyapunov certificate.

    E_dot = A E + B (v - J⁻¹ gamma),   A = [0 I; -K_eta -K_r],   B = [0; I]
    V(E)  = Eᵀ Q E,                    Aᵀ Q + Q A = -P
    V_dot = -Eᵀ P E + 2 (Bᵀ Q E) · (v - J⁻¹ gamma)
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.linalg import solve_continuous_lyapunov
from tabulate import tabulate

from lyapguard import logging
from lyapguard.tools import LyapguardError, NonHurwitzError
from lyapguard.tools.controller import Gains, VBoundTemplate, v_bound
from lyapguard.tools.utils import as_vector, is_symmetric_positive_definite

RESIDUAL_TOL: float = 1e-9


class Branch(str, Enum):
    """Which form of the robust term is active: ‖BᵀQE‖ >= sigma or the smoothed layer.

    Also accepts the branch numbers "15" (outside) and "16" (boundary layer).
    """

    OUTSIDE = "outside"
    BOUNDARY_LAYER = "boundary-layer"

    @classmethod
    def _missing_(cls, value):
        return {"15": cls.OUTSIDE, "16": cls.BOUNDARY_LAYER}.get(str(value).strip())

    @property
    def number(self) -> int:
        return 15 if self is Branch.OUTSIDE else 16

    @property
    def conjecture_name(self) -> str:
        return f"Stability_Eq{self.number}"


def build_A(gains: Gains) -> np.ndarray:
    """Error-system matrix A = [0 I; -K_eta -K_r]."""
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    A[3:, :3] = -gains.K_eta_mat
    A[3:, 3:] = -gains.K_r_mat
    return A


def build_B() -> np.ndarray:
    """Input matrix B = [0; I]."""
    B = np.zeros((6, 3))
    B[3:, :] = np.eye(3)
    return B


def lyapunov_residual(A: np.ndarray, Q: np.ndarray, P: np.ndarray) -> float:
    """Frobenius norm of Aᵀ Q + Q A + P."""
    return float(np.linalg.norm(A.T @ Q + Q @ A + P, "fro"))


def solve_lyapunov(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Solves Aᵀ Q + Q A = -P for the symmetric positive-definite Q.

    Args:
        A (np.ndarray): Hurwitz matrix.
        P (np.ndarray): Symmetric positive-definite right-hand side.

    Returns:
        np.ndarray: Symmetric positive-definite solution Q.

    Raises:
        NonHurwitzError: If an eigenvalue of A has non-negative real part.
        ValueError: If P is not symmetric positive definite.
        LyapguardError: If the solution misses the residual tolerance.
    """
    A = np.asarray(A, dtype=float)
    P = np.asarray(P, dtype=float)
    eig = np.linalg.eigvals(A)
    if np.any(eig.real >= 0.0):
        logging.error(f"A is not Hurwitz, eigenvalues: {eig.tolist()}")
        raise NonHurwitzError(
            f"A has eigenvalues with non-negative real part: max Re = {float(np.max(eig.real)):.6g}"
        )
    if not is_symmetric_positive_definite(P):
        raise ValueError("P must be symmetric positive definite")

    Q = solve_continuous_lyapunov(A.T, -P)
    Q = 0.5 * (Q + Q.T)
    residual = lyapunov_residual(A, Q, P)
    if residual >= RESIDUAL_TOL:
        logging.error(f"Lyapunov residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
        raise LyapguardError(f"Lyapunov residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
    if not is_symmetric_positive_definite(Q):
        raise LyapguardError("Lyapunov solution is not positive definite")
    return Q


class LyapunovCert(BaseModel):
    """Certified quadratic stability structure (A, B, Q, P) for given gains."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    gains: Gains

    @model_validator(mode="after")
    def _validate(self):
        if not np.array_equal(self.A, build_A(self.gains)):
            raise ValueError("A must equal [0 I; -K_eta -K_r] for the given gains")
        if not np.array_equal(self.B, build_B()):
            raise ValueError("B must equal [0; I]")
        for name in ("Q", "P"):
            m = getattr(self, name)
            if m.shape != (6, 6) or not is_symmetric_positive_definite(m):
                raise ValueError(f"{name} must be a 6x6 symmetric positive-definite matrix")
        residual = lyapunov_residual(self.A, self.Q, self.P)
        if residual >= RESIDUAL_TOL:
            raise ValueError(f"certificate residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
        return self

    @staticmethod
    def from_gains(gains: Gains, P: Optional[np.ndarray] = None) -> "LyapunovCert":
        """Builds the certificate, solving for Q. P defaults to the 6x6 identity."""
        A = build_A(gains)
        P = np.eye(6) if P is None else np.asarray(P, dtype=float)
        Q = solve_lyapunov(A, P)
        cert = LyapunovCert(A=A, B=build_B(), Q=Q, P=P, gains=gains)
        logging.info(f"Lyapunov certificate built:\n{format_certificate_summary(certificate_summary(cert))}")
        return cert


@dataclass(frozen=True)
class ErrorTrajectorySample:
    t: float
    E: np.ndarray
    V: float
    V_dot: float
    branch: Branch


def v_of(cert: LyapunovCert, E: Sequence[float]) -> float:
    """V(E) = Eᵀ Q E, exactly zero at the origin."""
    E = as_vector(E, 6, "E")
    if not np.any(E):
        return 0.0
    return float(E @ cert.Q @ E)


def switching_vector(cert: LyapunovCert, E: Sequence[float]) -> np.ndarray:
    """s = Bᵀ Q E."""
    return cert.B.T @ (cert.Q @ as_vector(E, 6, "E"))


def classify_branch(cert: LyapunovCert, E: Sequence[float], sigma: float) -> Branch:
    if float(np.linalg.norm(switching_vector(cert, E))) >= sigma:
        return Branch.OUTSIDE
    return Branch.BOUNDARY_LAYER


def error_dynamics_rhs(
    cert: LyapunovCert,
    E: Sequence[float],
    v: Sequence[float],
    j_inv_gamma: Sequence[float],
) -> np.ndarray:
    """E_dot = A E + B (v - J⁻¹ gamma)."""
    E = as_vector(E, 6, "E")
    drive = as_vector(v, 3, "v") - as_vector(j_inv_gamma, 3, "j_inv_gamma")
    return cert.A @ E + cert.B @ drive


def v_dot(
    cert: LyapunovCert,
    E: Sequence[float],
    v: Sequence[float],
    j_inv: np.ndarray,
    gam: Sequence[float],
    sigma: float,
) -> Tuple[float, Branch]:
    """Time derivative of V along the error dynamics.

    Args:
        cert (LyapunovCert): Certificate.
        E (Sequence[float]): Error state.
        v (Sequence[float]): Lumped uncertainty.
        j_inv (np.ndarray): J⁻¹(eta).
        gam (Sequence[float]): Robust term applied at this state.
        sigma (float): Boundary-layer width, used only to report the branch.

    Returns:
        Tuple[float, Branch]: V_dot and the active robust-term branch.
    """
    E = as_vector(E, 6, "E")
    s = switching_vector(cert, E)
    drive = as_vector(v, 3, "v") - np.asarray(j_inv) @ as_vector(gam, 3, "gamma")
    value = float(-(E @ cert.P @ E) + 2.0 * (s @ drive))
    branch = Branch.OUTSIDE if float(np.linalg.norm(s)) >= sigma else Branch.BOUNDARY_LAYER
    return value, branch


def stability_margin(
    cert: LyapunovCert,
    template: VBoundTemplate,
    E: Sequence[float],
    j_inv: np.ndarray,
    gam: Sequence[float],
) -> float:
    """V_dot with the worst admissible v: each |v_i| at its bound, signed against Bᵀ Q E.

    A negative value certifies V_dot < 0 for every v within the template at this E.
    """
    E = as_vector(E, 6, "E")
    s = switching_vector(cert, E)
    vb = v_bound(template, E)
    worst = float(2.0 * np.sum(np.abs(s) * vb))
    robust = float(2.0 * (s @ (np.asarray(j_inv) @ as_vector(gam, 3, "gamma"))))
    return float(-(E @ cert.P @ E)) + worst - robust


def certificate_summary(cert: LyapunovCert) -> Dict[str, Any]:
    """Eigenvalues of A, Q, P and the Lyapunov residual, JSON-ready."""
    eig_a = np.linalg.eigvals(cert.A)
    order = np.lexsort((eig_a.imag, eig_a.real))
    return {
        "K_eta": list(cert.gains.K_eta),
        "K_r": list(cert.gains.K_r),
        "eig_A_real": [float(x) for x in eig_a.real[order]],
        "eig_A_imag": [float(x) for x in eig_a.imag[order]],
        "eig_Q": [float(x) for x in np.linalg.eigvalsh(cert.Q)],
        "eig_P": [float(x) for x in np.linalg.eigvalsh(cert.P)],
        "residual": lyapunov_residual(cert.A, cert.Q, cert.P),
        "Q": cert.Q.tolist(),
        "P": cert.P.tolist(),
    }


def format_certificate_summary(summary: Dict[str, Any]) -> str:
    rows = [
        [i + 1, f"{re:.6g}{im:+.6g}j", f"{q:.6g}", f"{p:.6g}"]
        for i, (re, im, q, p) in enumerate(
            zip(summary["eig_A_real"], summary["eig_A_imag"], summary["eig_Q"], summary["eig_P"])
        )
    ]
    table = tabulate(rows, headers=["#", "eig(A)", "eig(Q)", "eig(P)"], tablefmt="github")
    return f"{table}\nresidual ‖AᵀQ + QA + P‖_F = {summary['residual']:.3e}"

"""
Robust dynamic-inversion attitude controller.

    u     = eta_d_ddot + K_r e_dot + K_eta e
    tau   = J_hat(eta) u + N_hat(eta, eta_dot) + d_hat + gamma
    v     = [I - J⁻¹ J_hat] u - J⁻¹ [dN + dd]      (dN = N_hat - N, dd = d_hat - d)
    gamma = delta/‖s‖ s  if ‖s‖ >= sigma  else  delta/sigma s,   s = Bᵀ Q E
    delta = ‖v_bound(E)‖ / beta_min

Under this convention eta_ddot = u - v + J⁻¹ gamma holds exactly for any
estimate J_hat. For J_hat proportional to J the product order in v does not
matter.
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Annotated, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lyapguard import logging
from lyapguard.tools import TemplateError
from lyapguard.tools.dynamics import (
    DisturbanceTorque,
    EulerState,
    PlantParams,
    Torque,
    TorqueLike,
    Vector3,
    _vec3,
    j_inverse,
    j_mat,
    n_term,
)
from lyapguard.tools.utils import CONDITION_CAP, as_vector

if TYPE_CHECKING:
    from lyapguard.tools.lyapunov import LyapunovCert


class Gains(BaseModel):
    """Diagonal entries of K_eta [1/s²] and K_r [1/s]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    K_eta: Vector3 = (16.0, 16.0, 9.0)
    K_r: Vector3 = (8.0, 8.0, 6.0)

    @field_validator("K_eta", "K_r")
    @classmethod
    def _positive(cls, value, info):
        if not all(math.isfinite(v) and v > 0.0 for v in value):
            raise ValueError(f"{info.field_name} entries must be strictly positive, got {value}")
        return value

    @property
    def K_eta_mat(self) -> np.ndarray:
        return np.diag(self.K_eta)

    @property
    def K_r_mat(self) -> np.ndarray:
        return np.diag(self.K_r)


class RobustBounds(BaseModel):
    """Assumption constants bounding disturbance, model error and reference acceleration."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    D: float = Field(0.02, ge=0, description="bound on ‖d_hat - d‖ [N m]")
    D_bar: float = Field(0.06, description="bound with ‖d‖ + D < D_bar [N m]")
    S: float = Field(0.02, ge=0, description="bound on ‖N_hat - N‖ [N m]")
    H: float = Field(5.0, gt=0, description="bound on sup ‖eta_d_ddot‖ [rad/s²]")
    xi: float = Field(0.2, ge=0, le=1, description="bound on ‖I - J_hat J⁻¹‖")
    beta_min: float = Field(60.0, gt=0, description="lower bound on ‖J⁻¹‖ [1/(kg m²)]")
    beta_max: float = Field(400.0, gt=0, description="upper bound on ‖J⁻¹‖ [1/(kg m²)]")
    sigma: float = Field(1e-7, gt=0, description="boundary-layer width")

    @model_validator(mode="after")
    def _consistent(self):
        if not self.D_bar > self.D:
            raise ValueError(
                f"disturbance bound unsatisfiable: ‖d‖ + D < D_bar needs D_bar > D "
                f"(got D={self.D}, D_bar={self.D_bar})"
            )
        if self.beta_min > self.beta_max:
            raise ValueError(
                f"beta_min={self.beta_min} must not exceed beta_max={self.beta_max}"
            )
        return self


class VBoundTemplate(BaseModel):
    """Per-axis affine bound |v_i| <= xi (H + a_i |E_(i+3)| + b_i |E_i|) + beta_max (S + D)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    xi: float
    H: float
    a: Vector3
    b: Vector3
    beta_max: float
    S: float
    D: float

    def check(self) -> "VBoundTemplate":
        """Validates the coefficients.

        Raises:
            TemplateError: If any coefficient is non-finite or negative, or xi > 1.
        """
        scalars = {"xi": self.xi, "H": self.H, "beta_max": self.beta_max, "S": self.S, "D": self.D}
        for name, value in scalars.items():
            if not math.isfinite(value) or value < 0.0:
                raise TemplateError(f"template coefficient {name}={value} must be finite and >= 0")
        for name, values in (("a", self.a), ("b", self.b)):
            if not all(math.isfinite(v) and v >= 0.0 for v in values):
                raise TemplateError(f"template coefficients {name}={values} must be finite and >= 0")
        if self.xi > 1.0:
            raise TemplateError(f"template coefficient xi={self.xi} must not exceed 1")
        return self

    @staticmethod
    def from_gains(bounds: RobustBounds, gains: Gains) -> "VBoundTemplate":
        """Template with a = diag(K_r), b = diag(K_eta).

        Valid as a bound on v whenever the inertia estimate is a scalar multiple of J.
        """
        return VBoundTemplate(
            xi=bounds.xi,
            H=bounds.H,
            a=gains.K_r,
            b=gains.K_eta,
            beta_max=bounds.beta_max,
            S=bounds.S,
            D=bounds.D,
        )


class ModelEstimates(BaseModel):
    """Model used for inversion: J_hat = (1+mu) J, N_hat = (1+mu) C eta_dot, d_hat constant."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    plant: PlantParams = PlantParams()
    mismatch: float = Field(0.0, gt=-1.0)
    d_hat: Vector3 = (0.0, 0.0, 0.0)

    def j_hat(self, eta: Sequence[float]) -> np.ndarray:
        return (1.0 + self.mismatch) * j_mat(self.plant, eta)

    def n_hat(self, state: EulerState) -> np.ndarray:
        return (1.0 + self.mismatch) * n_term(self.plant, state)

    @property
    def d_hat_vec(self) -> np.ndarray:
        return np.array(self.d_hat)


class ConstantAxis(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant"] = "constant"
    value: float = 0.0

    def evaluate(self, t: float) -> Tuple[float, float, float]:
        return self.value, 0.0, 0.0


class SinusoidAxis(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["sinusoid"] = "sinusoid"
    offset: float = 0.0
    amplitude: float = 0.0
    frequency_hz: float = Field(0.0, ge=0)
    phase: float = 0.0

    def evaluate(self, t: float) -> Tuple[float, float, float]:
        w = 2.0 * math.pi * self.frequency_hz
        arg = w * t + self.phase
        return (
            self.offset + self.amplitude * math.sin(arg),
            self.amplitude * w * math.cos(arg),
            -self.amplitude * w * w * math.sin(arg),
        )


class StepAxis(BaseModel):
    """Piecewise-constant reference; derivatives are zero away from the jump."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["step"] = "step"
    initial: float = 0.0
    final: float = 0.0
    step_time: float = Field(0.0, ge=0)

    def evaluate(self, t: float) -> Tuple[float, float, float]:
        return (self.initial if t < self.step_time else self.final), 0.0, 0.0


AxisReference = Annotated[
    Union[ConstantAxis, SinusoidAxis, StepAxis], Field(discriminator="kind")
]


class Reference(BaseModel):
    """Desired attitude eta_d(t) per axis with its first two derivatives."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    axes: Tuple[AxisReference, AxisReference, AxisReference] = (
        ConstantAxis(),
        ConstantAxis(),
        ConstantAxis(),
    )

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (eta_d, eta_d_dot, eta_d_ddot) at time t."""
        values = np.array([axis.evaluate(t) for axis in self.axes])
        return values[:, 0].copy(), values[:, 1].copy(), values[:, 2].copy()

    def sup_accel_norm(self, times: Sequence[float]) -> float:
        """Largest ‖eta_d_ddot‖ over the given sample times."""
        best = 0.0
        for t in times:
            best = max(best, float(np.linalg.norm(self.at(t)[2])))
        return best


def error_state(state: EulerState, ref: Reference, t: float) -> np.ndarray:
    """E = (e; e_dot) with e = eta_d(t) - eta and e_dot = eta_d_dot(t) - eta_dot."""
    eta_d, eta_d_dot, _ = ref.at(t)
    return np.concatenate([eta_d - state.eta_vec, eta_d_dot - state.eta_dot_vec])


def control_u(ref_ddot: Sequence[float], gains: Gains, E: Sequence[float]) -> np.ndarray:
    """Outer-loop input u = eta_d_ddot + K_r e_dot + K_eta e."""
    ref_ddot = as_vector(ref_ddot, 3, "ref_ddot")
    E = as_vector(E, 6, "E")
    return ref_ddot + gains.K_r_mat @ E[3:] + gains.K_eta_mat @ E[:3]


def gamma(
    bounds: RobustBounds, cert: "LyapunovCert", E: Sequence[float], delta: float
) -> np.ndarray:
    """Robust term with a sigma-wide boundary layer around Bᵀ Q E = 0.

    Args:
        bounds (RobustBounds): Supplies sigma.
        cert (LyapunovCert): Supplies B and Q.
        E (Sequence[float]): Error state.
        delta (float): Gain delta(E) >= 0.

    Returns:
        np.ndarray: gamma with ‖gamma‖ <= delta.
    """
    if not math.isfinite(delta) or delta < 0.0:
        raise ValueError(f"delta must be finite and non-negative, got {delta}")
    s = cert.B.T @ (cert.Q @ as_vector(E, 6, "E"))
    norm_s = float(np.linalg.norm(s))
    if norm_s >= bounds.sigma:
        return (delta / norm_s) * s
    return (delta / bounds.sigma) * s


def v_bound(template: VBoundTemplate, E: Sequence[float]) -> np.ndarray:
    """Per-axis upper bound on |v_i| from the affine template."""
    E = as_vector(E, 6, "E")
    a = np.array(template.a)
    b = np.array(template.b)
    return template.xi * (template.H + a * np.abs(E[3:]) + b * np.abs(E[:3])) + (
        template.beta_max * (template.S + template.D)
    )


def delta_gain(bounds: RobustBounds, vb: Sequence[float]) -> float:
    """Smallest admissible robust gain delta = ‖vb‖ / beta_min."""
    vb = as_vector(vb, 3, "vb")
    if np.any(vb < 0.0):
        raise ValueError(f"per-axis bounds must be non-negative, got {vb.tolist()}")
    return float(np.linalg.norm(vb)) / bounds.beta_min


def control_tau(
    est: ModelEstimates, u: Sequence[float], gam: Sequence[float], state: EulerState
) -> Torque:
    """Inverse-dynamics law tau = J_hat(eta) u + N_hat(eta, eta_dot) + d_hat + gamma."""
    u = as_vector(u, 3, "u")
    gam = as_vector(gam, 3, "gamma")
    tau = est.j_hat(state.eta) @ u + est.n_hat(state) + est.d_hat_vec + gam
    return Torque(tau=tau)


def n_true(params: PlantParams, state: EulerState) -> np.ndarray:
    """True velocity-dependent torque N = C(eta, eta_dot) eta_dot."""
    return n_term(params, state)


def uncertainty_v(
    params: PlantParams,
    est: ModelEstimates,
    state: EulerState,
    u: Sequence[float],
    d: TorqueLike,
    cond_cap: float = CONDITION_CAP,
) -> np.ndarray:
    """Lumped uncertainty v = [I - J⁻¹ J_hat] u - J⁻¹ [dN + dd]."""
    u = as_vector(u, 3, "u")
    dist = _vec3(d, "d")
    j_inv = j_inverse(params, state.eta, cond_cap)
    delta_n = est.n_hat(state) - n_true(params, state)
    delta_d = est.d_hat_vec - dist
    return (np.eye(3) - j_inv @ est.j_hat(state.eta)) @ u - j_inv @ (delta_n + delta_d)


@dataclass(frozen=True)
class ControlOutput:
    """Everything the controller computed for one step."""

    t: float
    eta_d: np.ndarray
    eta_d_dot: np.ndarray
    eta_d_ddot: np.ndarray
    E: np.ndarray
    u: np.ndarray
    vb: np.ndarray
    delta: float
    gamma: np.ndarray
    tau: Torque


class RobustAttitudeController:
    """Stateless robust attitude controller: one call per control step."""

    def __init__(
        self,
        gains: Gains,
        bounds: RobustBounds,
        cert: "LyapunovCert",
        estimates: ModelEstimates,
        template: Optional[VBoundTemplate] = None,
    ):
        self.gains = gains
        self.bounds = bounds
        self.cert = cert
        self.estimates = estimates
        self.template = (template or VBoundTemplate.from_gains(bounds, gains)).check()
        logging.info(
            f"RobustAttitudeController initialized with K_eta={gains.K_eta}, K_r={gains.K_r}, "
            f"sigma={bounds.sigma}, mismatch={estimates.mismatch}"
        )

    def command(self, state: EulerState, ref: Reference, t: float) -> ControlOutput:
        eta_d, eta_d_dot, eta_d_ddot = ref.at(t)
        E = np.concatenate([eta_d - state.eta_vec, eta_d_dot - state.eta_dot_vec])
        u = control_u(eta_d_ddot, self.gains, E)
        vb = v_bound(self.template, E)
        delta = delta_gain(self.bounds, vb)
        gam = gamma(self.bounds, self.cert, E, delta)
        tau = control_tau(self.estimates, u, gam, state)
        return ControlOutput(
            t=t,
            eta_d=eta_d,
            eta_d_dot=eta_d_dot,
            eta_d_ddot=eta_d_ddot,
            E=E,
            u=u,
            vb=vb,
            delta=delta,
            gamma=gam,
            tau=tau,
        )

    def uncertainty(
        self, plant: PlantParams, state: EulerState, u: np.ndarray, d: DisturbanceTorque
    ) -> np.ndarray:
        return uncertainty_v(plant, self.estimates, state, u, d)

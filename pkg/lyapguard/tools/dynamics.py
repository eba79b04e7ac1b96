"""
Euler-angle attitude dynamics of a quadcopter.

The plant obeys J(eta) eta_ddot + C(eta, eta_dot) eta_dot + d = tau, with
J(eta) = Wᵀ(eta) diag(Ix, Iy, Iz) W(eta) and C built from the Christoffel
symbols of J so that d/dt[J] - 2C is skew-symmetric. Rotor speeds map to
body torques through the usual plus-configuration mixer.

All functions are pure; the value types are frozen pydantic models.
"""

import math
from typing import Annotated, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator

from lyapguard import logging
from lyapguard.tools import DomainError, InfeasibleMixError
from lyapguard.tools.utils import CONDITION_CAP, as_vector, inv3

GIMBAL_MARGIN: float = 1e-6
HALF_PI: float = 0.5 * math.pi


def _to_float_tuple(value):
    if isinstance(value, np.ndarray):
        return tuple(float(v) for v in value.reshape(-1))
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return value


Vector3 = Annotated[Tuple[float, float, float], BeforeValidator(_to_float_tuple)]
Vector4 = Annotated[
    Tuple[float, float, float, float], BeforeValidator(_to_float_tuple)
]


def _check_finite(value: Tuple[float, ...], name: str) -> Tuple[float, ...]:
    if not all(math.isfinite(v) for v in value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


class EulerState(BaseModel):
    """Attitude eta = (phi, theta, psi) [rad] and its rate eta_dot [rad/s]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: Vector3
    eta_dot: Vector3 = (0.0, 0.0, 0.0)

    @field_validator("eta")
    @classmethod
    def _validate_eta(cls, value):
        _check_finite(value, "eta")
        phi, theta, _ = value
        if abs(phi) >= HALF_PI or abs(theta) >= HALF_PI:
            raise ValueError(
                f"roll and pitch must lie in the open interval (-pi/2, pi/2), got phi={phi}, theta={theta}"
            )
        return value

    @field_validator("eta_dot")
    @classmethod
    def _validate_eta_dot(cls, value):
        return _check_finite(value, "eta_dot")

    @property
    def eta_vec(self) -> np.ndarray:
        return np.array(self.eta)

    @property
    def eta_dot_vec(self) -> np.ndarray:
        return np.array(self.eta_dot)

    @staticmethod
    def from_arrays(eta: Sequence[float], eta_dot: Sequence[float]) -> "EulerState":
        return EulerState(eta=eta, eta_dot=eta_dot)


class PlantParams(BaseModel):
    """Geometry, aerodynamic coefficients and body inertias of the quadcopter."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    arm_length: float = Field(0.225, gt=0, description="arm length l [m]")
    thrust_coeff: float = Field(2.98e-6, gt=0, description="thrust coefficient k [N s^2]")
    drag_coeff: float = Field(1.14e-7, gt=0, description="drag coefficient b [N m s^2]")
    body_inertia: Vector3 = (4.856e-3, 4.856e-3, 8.801e-3)
    omega_max: float = Field(1200.0, gt=0, description="rotor speed limit [rad/s]")

    @field_validator("body_inertia")
    @classmethod
    def _validate_inertia(cls, value):
        _check_finite(value, "body_inertia")
        if min(value) <= 0.0:
            raise ValueError(f"body inertias must be strictly positive, got {value}")
        return value

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.diag(self.body_inertia)


class RotorSpeeds(BaseModel):
    """Propeller angular speeds [rad/s]. `saturated` is set by rotors_from_torque."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega: Vector4
    saturated: bool = False

    @field_validator("omega")
    @classmethod
    def _validate_omega(cls, value):
        return _check_finite(value, "omega")


class Torque(BaseModel):
    """Body torque (tau_phi, tau_theta, tau_psi) [N m]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tau: Vector3

    @field_validator("tau")
    @classmethod
    def _validate_tau(cls, value):
        return _check_finite(value, "tau")

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.tau)


class DisturbanceTorque(BaseModel):
    """Lumped external disturbance torque d [N m]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    d: Vector3 = (0.0, 0.0, 0.0)

    @field_validator("d")
    @classmethod
    def _validate_d(cls, value):
        return _check_finite(value, "d")

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.d)


TorqueLike = Union[Torque, DisturbanceTorque, Sequence[float], np.ndarray]


def _vec3(value: TorqueLike, name: str) -> np.ndarray:
    if isinstance(value, Torque):
        return value.vec
    if isinstance(value, DisturbanceTorque):
        return value.vec
    return as_vector(value, 3, name)


def _check_gimbal(eta: np.ndarray) -> None:
    theta = float(eta[1])
    if not math.isfinite(theta) or abs(theta) >= HALF_PI - GIMBAL_MARGIN:
        logging.error(f"Gimbal singularity: theta={theta}")
        raise DomainError(
            f"pitch |theta|={abs(theta):.9f} is at or beyond the gimbal limit pi/2 - {GIMBAL_MARGIN:g}"
        )


def euler_rate_transform(eta: Sequence[float]) -> np.ndarray:
    """Euler-rate to body-rate map W(eta) for the ZYX convention.

    Args:
        eta (Sequence[float]): Euler angles (phi, theta, psi) in radians.

    Returns:
        np.ndarray: 3x3 matrix W with det W = cos(theta).

    Raises:
        DomainError: If |theta| >= pi/2 - 1e-6.
    """
    eta = as_vector(eta, 3, "eta")
    _check_gimbal(eta)
    phi, theta = eta[0], eta[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    return np.array(
        [
            [1.0, 0.0, -st],
            [0.0, cp, ct * sp],
            [0.0, -sp, ct * cp],
        ]
    )


def euler_rate_transform_partials(
    eta: Sequence[float],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives (dW/dphi, dW/dtheta, dW/dpsi) of the Euler-rate transform."""
    eta = as_vector(eta, 3, "eta")
    _check_gimbal(eta)
    phi, theta = eta[0], eta[1]
    sp, cp = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    d_phi = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, -sp, ct * cp],
            [0.0, -cp, -ct * sp],
        ]
    )
    d_theta = np.array(
        [
            [0.0, 0.0, -ct],
            [0.0, 0.0, -st * sp],
            [0.0, 0.0, -st * cp],
        ]
    )
    return d_phi, d_theta, np.zeros((3, 3))


def j_mat(params: PlantParams, eta: Sequence[float]) -> np.ndarray:
    """Inertia-like matrix J(eta) = Wᵀ diag(Ix, Iy, Iz) W (symmetric positive definite)."""
    w = euler_rate_transform(eta)
    return w.T @ params.inertia_matrix @ w


def j_partials(params: PlantParams, eta: Sequence[float]) -> np.ndarray:
    """Stack of dJ/deta_i, shape (3, 3, 3), first index is i."""
    w = euler_rate_transform(eta)
    m = params.inertia_matrix
    partials = []
    for dw in euler_rate_transform_partials(eta):
        left = dw.T @ m @ w
        partials.append(left + left.T)
    return np.stack(partials)


def j_inverse(
    params: PlantParams, eta: Sequence[float], cond_cap: float = CONDITION_CAP
) -> np.ndarray:
    """J(eta)⁻¹ through the capped closed-form 3x3 inverse."""
    return inv3(j_mat(params, eta), cond_cap)


def j_dot(params: PlantParams, state: EulerState) -> np.ndarray:
    """Time derivative of J along the current Euler-angle rate."""
    return np.einsum("ikj,i->kj", j_partials(params, state.eta), state.eta_dot_vec)


def c_mat(params: PlantParams, state: EulerState) -> np.ndarray:
    """Coriolis matrix from the Christoffel symbols of J.

    C[k, j] = sum_i 1/2 (dJ[k, j]/deta_i + dJ[k, i]/deta_j - dJ[i, j]/deta_k) eta_dot_i,
    which makes J_dot - 2C skew-symmetric.
    """
    dj = j_partials(params, state.eta)
    rates = state.eta_dot_vec
    first = np.einsum("ikj,i->kj", dj, rates)
    second = np.einsum("jki,i->kj", dj, rates)
    third = np.einsum("kij,i->kj", dj, rates)
    return 0.5 * (first + second - third)


def n_term(params: PlantParams, state: EulerState) -> np.ndarray:
    """Velocity-dependent torque N(eta, eta_dot) = C(eta, eta_dot) eta_dot."""
    return c_mat(params, state) @ state.eta_dot_vec


def rotational_energy(params: PlantParams, state: EulerState) -> float:
    """Kinetic energy 1/2 eta_dotᵀ J(eta) eta_dot."""
    rates = state.eta_dot_vec
    return 0.5 * float(rates @ j_mat(params, state.eta) @ rates)


def torque_from_rotors(params: PlantParams, rotors: RotorSpeeds) -> Torque:
    """Body torque produced by four rotor speeds.

    tau_phi = l k (w2² - w4²), tau_theta = l k (w3² - w1²),
    tau_psi = b (-w1² + w2² - w3² + w4²).

    Raises:
        DomainError: If any |w_i| >= omega_max.
    """
    omega = np.array(rotors.omega)
    if np.any(np.abs(omega) >= params.omega_max):
        logging.error(f"Rotor speeds {omega.tolist()} exceed omega_max={params.omega_max}")
        raise DomainError(
            f"rotor speeds must satisfy |w_i| < omega_max={params.omega_max}, got {omega.tolist()}"
        )
    sq = omega**2
    lk = params.arm_length * params.thrust_coeff
    return Torque(
        tau=(
            lk * (sq[1] - sq[3]),
            lk * (-sq[0] + sq[2]),
            params.drag_coeff * (-sq[0] + sq[1] - sq[2] + sq[3]),
        )
    )


def rotors_from_torque(
    params: PlantParams,
    tau: TorqueLike,
    thrust: float,
    clip_negative: bool = False,
) -> RotorSpeeds:
    """Inverse mixer: rotor speeds realising a body torque and collective thrust.

    Speeds at or above omega_max are clamped just below it and the result is
    flagged as saturated.

    Args:
        params (PlantParams): Plant constants.
        tau (TorqueLike): Requested body torque.
        thrust (float): Collective thrust k * sum(w_i²) in newtons, >= 0.
        clip_negative (bool): Clip negative squared speeds to zero (flagged as
            saturated) instead of raising.

    Returns:
        RotorSpeeds: Non-negative speeds with the saturation flag.

    Raises:
        ValueError: If thrust is negative.
        InfeasibleMixError: If a squared speed is negative and clip_negative is False.
    """
    if not math.isfinite(thrust) or thrust < 0.0:
        raise ValueError(f"thrust must be a finite non-negative value, got {thrust}")
    t = _vec3(tau, "tau")
    lk = params.arm_length * params.thrust_coeff
    total = thrust / params.thrust_coeff
    yaw = t[2] / params.drag_coeff
    even = 0.5 * (total + yaw)
    odd = 0.5 * (total - yaw)
    sq = np.array(
        [
            0.5 * (odd - t[1] / lk),
            0.5 * (even + t[0] / lk),
            0.5 * (odd + t[1] / lk),
            0.5 * (even - t[0] / lk),
        ]
    )
    saturated = False
    if np.any(sq < 0.0):
        if not clip_negative:
            logging.error(f"Infeasible mix for tau={t.tolist()}, thrust={thrust}: {sq.tolist()}")
            raise InfeasibleMixError(
                f"torque {t.tolist()} with thrust {thrust} needs negative squared speeds {sq.tolist()}"
            )
        sq = np.maximum(sq, 0.0)
        saturated = True
    omega = np.sqrt(sq)
    limit = np.nextafter(params.omega_max, 0.0)
    if np.any(omega > limit):
        omega = np.minimum(omega, limit)
        saturated = True
    if saturated:
        logging.debug(f"Rotor command saturated: {omega.tolist()}")
    return RotorSpeeds(omega=omega, saturated=saturated)


def attitude_accel(
    params: PlantParams,
    state: EulerState,
    tau: TorqueLike,
    d: TorqueLike,
    cond_cap: float = CONDITION_CAP,
) -> np.ndarray:
    """Forward dynamics eta_ddot = J⁻¹(eta) (tau - C(eta, eta_dot) eta_dot - d).

    Raises:
        DomainError: At the gimbal singularity.
        SingularityError: If J fails the condition-number cap.
    """
    t = _vec3(tau, "tau")
    dist = _vec3(d, "d")
    return j_inverse(params, state.eta, cond_cap) @ (t - n_term(params, state) - dist)

"""
Deterministic closed-loop simulation of the attitude plant under the robust controller.

Fixed-step classical RK4. The controller is evaluated at the start of each
step and its torque held over the step (zero-order hold); the commanded torque
is routed through the rotor mixer so the applied torque respects omega_max.
The disturbance is evaluated at every RK4 stage time.
"""

import math
from typing import Annotated, Callable, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from lyapguard import logging
from lyapguard.tools import DomainError, LyapguardError, SampleSource, ScenarioError, SimulationAborted
from lyapguard.tools.controller import (
    ModelEstimates,
    Reference,
    RobustAttitudeController,
    RobustBounds,
    uncertainty_v,
)
from lyapguard.tools.dynamics import (
    EulerState,
    PlantParams,
    TorqueLike,
    Vector3,
    _vec3,
    attitude_accel,
    j_inverse,
    rotors_from_torque,
    torque_from_rotors,
)
from lyapguard.tools.lyapunov import v_dot, v_of
from lyapguard.tools.monitor import MonitorConfig, causes_to_flags, check_assumptions
from lyapguard.tools.trajectory import TrajectoryLog, TrajectorySample
from lyapguard.tools.utils import CONDITION_CAP


class ConstantSegment(BaseModel):
    """Constant torque d on [start, end); end None means until the end of the run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant"] = "constant"
    start: float = Field(0.0, ge=0)
    end: Optional[float] = None
    d: Vector3 = (0.0, 0.0, 0.0)

    def at(self, t: float) -> np.ndarray:
        if t < self.start or (self.end is not None and t >= self.end):
            return np.zeros(3)
        return np.array(self.d)

    def peak_norm(self) -> float:
        return float(np.linalg.norm(self.d))


class GustSegment(BaseModel):
    """Raised-cosine pulse: peak * (1 - cos(2 pi (t - start) / width)) / 2 on [start, start + width]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["gust"] = "gust"
    start: float = Field(0.0, ge=0)
    width: float = Field(..., gt=0)
    peak: Vector3

    def at(self, t: float) -> np.ndarray:
        if t < self.start or t > self.start + self.width:
            return np.zeros(3)
        shape = 0.5 * (1.0 - math.cos(2.0 * math.pi * (t - self.start) / self.width))
        return shape * np.array(self.peak)

    def peak_norm(self) -> float:
        return float(np.linalg.norm(self.peak))


class RandomGustSegment(BaseModel):
    """`count` raised-cosine gusts with random onset and direction, drawn from the scenario seed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["random_gust"] = "random_gust"
    count: int = Field(1, ge=1)
    width: float = Field(..., gt=0)
    max_peak: float = Field(..., ge=0)

    def expand(self, rng: np.random.Generator, duration: float) -> List[GustSegment]:
        gusts = []
        latest = max(duration - self.width, 0.0)
        for _ in range(self.count):
            start = float(rng.uniform(0.0, latest))
            direction = rng.normal(size=3)
            direction /= max(float(np.linalg.norm(direction)), 1e-12)
            magnitude = float(rng.uniform(0.0, self.max_peak))
            gusts.append(GustSegment(start=start, width=self.width, peak=magnitude * direction))
        return gusts


DisturbanceSegment = Annotated[
    Union[ConstantSegment, GustSegment, RandomGustSegment], Field(discriminator="kind")
]


class Scenario(BaseModel):
    """Scripted run: horizon, initial attitude, reference, disturbance schedule and model mismatch."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    duration: float = Field(5.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    initial: EulerState = EulerState(eta=(0.0, 0.0, 0.0))
    reference: Reference = Reference()
    disturbance: List[DisturbanceSegment] = Field(default_factory=list)
    mismatch: float = Field(0.0, gt=-1.0)
    d_hat: Vector3 = (0.0, 0.0, 0.0)
    seed: int = 0
    hover_speed: float = Field(600.0, gt=0, description="rotor speed giving the collective thrust [rad/s]")

    _segments: List[Union[ConstantSegment, GustSegment]] = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def _validate(self):
        if self.duration < self.dt:
            raise ValueError(f"duration={self.duration} must be at least dt={self.dt}")
        for segment in self.disturbance:
            if isinstance(segment, GustSegment) and segment.start + segment.width > self.duration:
                raise ValueError(
                    f"gust [{segment.start}, {segment.start + segment.width}] leaves [0, {self.duration}]"
                )
            if isinstance(segment, ConstantSegment):
                if segment.start > self.duration or (
                    segment.end is not None and not segment.start <= segment.end <= self.duration
                ):
                    raise ValueError(f"constant segment [{segment.start}, {segment.end}] leaves [0, {self.duration}]")
            if isinstance(segment, RandomGustSegment) and segment.width > self.duration:
                raise ValueError(f"random gust width {segment.width} exceeds duration {self.duration}")
        return self

    def model_post_init(self, __context) -> None:
        rng = np.random.default_rng(self.seed)
        segments: List[Union[ConstantSegment, GustSegment]] = []
        for segment in self.disturbance:
            if isinstance(segment, RandomGustSegment):
                segments.extend(segment.expand(rng, self.duration))
            else:
                segments.append(segment)
        self._segments = segments

    @property
    def steps(self) -> int:
        """Number of integration steps; the log holds steps + 1 samples."""
        return int(math.floor(self.duration / self.dt + 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def disturbance_at(self, t: float) -> np.ndarray:
        total = np.zeros(3)
        for segment in self._segments:
            total = total + segment.at(t)
        return total

    def thrust(self, plant: PlantParams) -> float:
        return 4.0 * plant.thrust_coeff * self.hover_speed**2

    def estimates(self, plant: PlantParams) -> ModelEstimates:
        return ModelEstimates(plant=plant, mismatch=self.mismatch, d_hat=self.d_hat)


def check_scenario(scenario: Scenario, bounds: RobustBounds) -> None:
    """Rejects a scenario whose reference acceleration reaches H on the sample grid.

    Raises:
        ScenarioError: If sup ‖eta_d_ddot‖ >= H.
    """
    sup = scenario.reference.sup_accel_norm(scenario.times)
    if not sup < bounds.H:
        logging.error(f"Reference acceleration sup {sup:.6g} >= H={bounds.H}")
        raise ScenarioError(
            f"reference acceleration bound violated: sup ‖eta_d_ddot‖ = {sup:.6g} must stay below H = {bounds.H}"
        )


def rk4_step(
    f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float
) -> np.ndarray:
    """One classical Runge-Kutta step of y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _state(y: np.ndarray) -> EulerState:
    try:
        return EulerState(eta=y[:3], eta_dot=y[3:])
    except ValidationError as e:
        raise DomainError(f"state left the flight domain: eta={y[:3].tolist()}") from e


def propagate(
    plant: PlantParams,
    state: EulerState,
    t: float,
    h: float,
    tau: TorqueLike,
    disturbance: Optional[Callable[[float], np.ndarray]] = None,
    cond_cap: float = CONDITION_CAP,
) -> EulerState:
    """Advances the plant by h with tau held constant.

    Raises:
        DomainError: If a stage leaves the Euler-angle domain.
        SingularityError: If J fails the condition cap.
    """
    tau_vec = _vec3(tau, "tau")

    def f(time: float, y: np.ndarray) -> np.ndarray:
        d = np.zeros(3) if disturbance is None else disturbance(time)
        return np.concatenate([y[3:], attitude_accel(plant, _state(y), tau_vec, d, cond_cap)])

    y0 = np.concatenate([state.eta_vec, state.eta_dot_vec])
    return _state(rk4_step(f, t, y0, h))


class ClosedLoopSimulator:
    """Plant, robust controller and scenario wired into a fixed-step loop.

    Args:
        plant (PlantParams): True plant.
        controller (RobustAttitudeController): Controller, built on the scenario's model estimates.
        scenario (Scenario): Run description.
        monitor_cfg (Optional[MonitorConfig]): Settings used to flag assumption violations in the log.
        cond_cap (float): Condition-number cap for J inversions.

    Raises:
        ScenarioError: If the reference acceleration reaches the configured H.
    """

    def __init__(
        self,
        plant: PlantParams,
        controller: RobustAttitudeController,
        scenario: Scenario,
        monitor_cfg: Optional[MonitorConfig] = None,
        cond_cap: float = CONDITION_CAP,
    ):
        check_scenario(scenario, controller.bounds)
        self.plant = plant
        self.controller = controller
        self.scenario = scenario
        self.cond_cap = cond_cap
        self.thrust = scenario.thrust(plant)
        self.monitor_cfg = monitor_cfg or MonitorConfig(
            bounds=controller.bounds,
            cert=controller.cert,
            plant=plant,
            estimates=controller.estimates,
            cond_cap=cond_cap,
        )
        logging.info(
            f"Scenario loaded: duration={scenario.duration}s, dt={scenario.dt}s, "
            f"{len(scenario.disturbance)} disturbance segments, mismatch={scenario.mismatch}, seed={scenario.seed}"
        )

    def sample(self, state: EulerState, t: float) -> Tuple[TrajectorySample, np.ndarray]:
        """Evaluates controller, mixer and certificate at (state, t).

        Returns:
            Tuple[TrajectorySample, np.ndarray]: The log row and the applied torque.
        """
        out = self.controller.command(state, self.scenario.reference, t)
        rotors = rotors_from_torque(self.plant, out.tau, self.thrust, clip_negative=True)
        applied = torque_from_rotors(self.plant, rotors).vec
        d = self.scenario.disturbance_at(t)
        j_inv = j_inverse(self.plant, state.eta, self.cond_cap)
        v = uncertainty_v(self.plant, self.controller.estimates, state, out.u, d, self.cond_cap)
        vd, branch = v_dot(self.controller.cert, out.E, v, j_inv, out.gamma, self.controller.bounds.sigma)
        row = TrajectorySample(
            t=t,
            eta=state.eta_vec,
            eta_dot=state.eta_dot_vec,
            eta_d=out.eta_d,
            eta_d_ddot=out.eta_d_ddot,
            E=out.E,
            tau=applied,
            omega=np.array(rotors.omega),
            d=d,
            v=v,
            gamma=out.gamma,
            V=v_of(self.controller.cert, out.E),
            V_dot=vd,
            branch=branch.value,
            saturated=rotors.saturated,
        )
        causes, _ = check_assumptions(self.monitor_cfg, row)
        row.assumption_flags = causes_to_flags(causes)
        return row, applied

    def step(self, state: EulerState, t: float) -> Tuple[EulerState, TrajectorySample]:
        """One RK4 step under zero-order-hold control. Returns (next_state, sample at t)."""
        row, applied = self.sample(state, t)
        next_state = propagate(
            self.plant,
            state,
            t,
            self.scenario.dt,
            applied,
            self.scenario.disturbance_at,
            self.cond_cap,
        )
        return next_state, row

    def iter_samples(self, log: Optional[TrajectoryLog] = None) -> Iterator[TrajectorySample]:
        """Yields samples as they are produced, appending them to `log`.

        Raises:
            SimulationAborted: On a domain or singularity failure, carrying the samples produced so far.
        """
        log = TrajectoryLog() if log is None else log
        state = self.scenario.initial
        steps = self.scenario.steps
        dt = self.scenario.dt
        for k in range(steps + 1):
            t = k * dt
            try:
                row, applied = self.sample(state, t)
            except (LyapguardError, ValueError) as e:
                logging.error(f"Simulation aborted at t={t:.6f}s: {e}")
                raise SimulationAborted(log, t, str(e)) from e
            log.append(row)
            yield row
            if k == steps:
                break
            try:
                state = propagate(
                    self.plant, state, t, dt, applied, self.scenario.disturbance_at, self.cond_cap
                )
            except (LyapguardError, ValueError) as e:
                # the row at t stays in the log as the diagnostic sample
                logging.error(f"Simulation aborted while stepping from t={t:.6f}s: {e}")
                raise SimulationAborted(log, t, str(e)) from e

    def run(self) -> TrajectoryLog:
        log = TrajectoryLog()
        for _ in self.iter_samples(log):
            pass
        logging.info(f"Simulation finished: {len(log)} samples")
        return log


class LiveSimulationSource(SampleSource):
    """Streams samples straight out of a running simulation."""

    def __init__(self, simulator: ClosedLoopSimulator):
        self.simulator = simulator
        self.log = TrajectoryLog()

    def describe(self) -> str:
        scenario = self.simulator.scenario
        return f"live-simulation:{scenario.duration}s@{scenario.dt}s"

    def samples(self) -> Iterator[TrajectorySample]:
        yield from self.simulator.iter_samples(self.log)

"""
Streaming stability monitor.

Each sample is checked against the robust-control assumptions (disturbance,
Coriolis-model error, reference acceleration, inertia mismatch, ‖J⁻¹‖
range, flight envelope) and against V_dot < 0. A debounced three-state
verdict (Stable, Warning, Violation) is derived from the stream of
per-sample results; every state change is emitted as a transition record.
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lyapguard import logging
from lyapguard.tools import DomainError, OutOfOrderSampleError, SampleSource
from lyapguard.tools.controller import ModelEstimates, RobustBounds
from lyapguard.tools.dynamics import HALF_PI, EulerState, PlantParams, j_inverse, n_term
from lyapguard.tools.lyapunov import LyapunovCert, v_dot
from lyapguard.tools.trajectory import TrajectorySample
from lyapguard.tools.utils import CONDITION_CAP, induced_norm


class Cause(str, Enum):
    LYAPUNOV_POSITIVE = "LyapunovPositive"
    DISTURBANCE_BOUND = "DisturbanceBound"
    DELTA_N_BOUND = "DeltaNBound"
    REF_ACCEL_BOUND = "RefAccelBound"
    INERTIA_MISMATCH_BOUND = "InertiaMismatchBound"
    J_INV_NORM_BOUND = "JInvNormBound"
    ENVELOPE_EXIT = "EnvelopeExit"

    @property
    def bit(self) -> int:
        return 1 << list(Cause).index(self)


class VerdictState(str, Enum):
    STABLE = "Stable"
    WARNING = "Warning"
    VIOLATION = "Violation"


SEVERITY: Dict[VerdictState, int] = {
    VerdictState.STABLE: 0,
    VerdictState.WARNING: 1,
    VerdictState.VIOLATION: 2,
}

EXIT_CODES: Dict[VerdictState, int] = {
    VerdictState.STABLE: 0,
    VerdictState.WARNING: 10,
    VerdictState.VIOLATION: 20,
}


def causes_to_flags(causes: Iterable[Cause]) -> int:
    flags = 0
    for cause in causes:
        flags |= cause.bit
    return flags


def flags_to_causes(flags: int) -> FrozenSet[Cause]:
    return frozenset(c for c in Cause if flags & c.bit)


class EnvelopeLimits(BaseModel):
    """Angle box inside which the model and certificate are trusted [rad]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    roll_limit: float = Field(1.4, gt=0, lt=HALF_PI)
    pitch_limit: float = Field(1.4, gt=0, lt=HALF_PI)


class MonitorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    bounds: RobustBounds
    cert: LyapunovCert
    plant: PlantParams = PlantParams()
    estimates: ModelEstimates = ModelEstimates()
    debounce_n: int = Field(5, ge=1)
    e_floor: float = Field(1e-3, ge=0)
    envelope: EnvelopeLimits = EnvelopeLimits()
    divider: int = Field(1, ge=1)
    cond_cap: float = Field(CONDITION_CAP, gt=1)

    @model_validator(mode="after")
    def _same_plant(self):
        if self.estimates.plant != self.plant:
            raise ValueError("model estimates must be built on the monitored plant")
        return self


@dataclass(frozen=True)
class Verdict:
    state: VerdictState
    causes: FrozenSet[Cause]
    t: float
    details: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.state == VerdictState.VIOLATION and not self.causes:
            raise ValueError("a Violation verdict needs at least one cause")
        if self.state == VerdictState.STABLE and self.causes:
            raise ValueError("a Stable verdict carries no causes")


@dataclass(frozen=True)
class Transition:
    t: float
    from_state: VerdictState
    to_state: VerdictState
    causes: FrozenSet[Cause]
    margins: Dict[str, float]

    @property
    def verdict(self) -> Verdict:
        causes = frozenset() if self.to_state == VerdictState.STABLE else self.causes
        return Verdict(state=self.to_state, causes=causes, t=self.t, details=dict(self.margins))

    def to_json(self) -> str:
        """One NDJSON record: t, from, to, causes, margins."""
        return json.dumps(
            {
                "t": self.t,
                "from": self.from_state.value,
                "to": self.to_state.value,
                "causes": sorted(c.value for c in self.causes),
                "margins": {k: self.margins[k] for k in sorted(self.margins)},
            },
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class MonitorState:
    verdict: VerdictState = VerdictState.STABLE
    consecutive_bad: int = 0
    consecutive_clean: int = 0
    last_t: Optional[float] = None
    seen: int = 0


def check_assumptions(
    cfg: MonitorConfig, sample: TrajectorySample
) -> Tuple[FrozenSet[Cause], Dict[str, float]]:
    """Evaluates every robust-control assumption on one sample.

    Margins are bound minus value. Strict inequalities (‖d‖ + D < D_bar,
    ‖eta_d_ddot‖ < H, the envelope) fail at margin <= 0, the others at margin < 0.
    The disturbance bound is reported three ways: total (D_bar - ‖d‖ - D),
    raw (D - ‖d‖) and error (D - ‖d_hat - d‖); any failing one raises
    DisturbanceBound.

    Returns:
        Tuple[FrozenSet[Cause], Dict[str, float]]: Violated causes and all margins.
    """
    b = cfg.bounds
    causes = set()
    margins: Dict[str, float] = {}

    d = np.asarray(sample.d, dtype=float)
    d_norm = float(np.linalg.norm(d))
    margins["disturbance_total"] = b.D_bar - (d_norm + b.D)
    margins["disturbance_raw"] = b.D - d_norm
    margins["disturbance_error"] = b.D - float(np.linalg.norm(cfg.estimates.d_hat_vec - d))
    if (
        margins["disturbance_total"] <= 0.0
        or margins["disturbance_raw"] < 0.0
        or margins["disturbance_error"] < 0.0
    ):
        causes.add(Cause.DISTURBANCE_BOUND)

    margins["ref_accel"] = b.H - float(np.linalg.norm(sample.eta_d_ddot))
    if margins["ref_accel"] <= 0.0:
        causes.add(Cause.REF_ACCEL_BOUND)

    phi, theta = float(sample.eta[0]), float(sample.eta[1])
    margins["envelope_roll"] = cfg.envelope.roll_limit - abs(phi)
    margins["envelope_pitch"] = cfg.envelope.pitch_limit - abs(theta)
    if margins["envelope_roll"] <= 0.0 or margins["envelope_pitch"] <= 0.0:
        causes.add(Cause.ENVELOPE_EXIT)

    try:
        state = EulerState(eta=sample.eta, eta_dot=sample.eta_dot)
        j_inv = j_inverse(cfg.plant, state.eta, cfg.cond_cap)
    except (DomainError, ValueError) as e:
        logging.warning(f"Model checks skipped at t={sample.t}: {e}")
        causes.add(Cause.ENVELOPE_EXIT)
        return frozenset(causes), margins

    delta_n = cfg.estimates.n_hat(state) - n_term(cfg.plant, state)
    margins["delta_n"] = b.S - float(np.linalg.norm(delta_n))
    if margins["delta_n"] < 0.0:
        causes.add(Cause.DELTA_N_BOUND)

    mismatch = induced_norm(np.eye(3) - cfg.estimates.j_hat(state.eta) @ j_inv)
    margins["inertia_mismatch"] = b.xi - mismatch
    if margins["inertia_mismatch"] < 0.0:
        causes.add(Cause.INERTIA_MISMATCH_BOUND)

    j_inv_norm = induced_norm(j_inv)
    margins["j_inv_lower"] = j_inv_norm - b.beta_min
    margins["j_inv_upper"] = b.beta_max - j_inv_norm
    if margins["j_inv_lower"] < 0.0 or margins["j_inv_upper"] < 0.0:
        causes.add(Cause.J_INV_NORM_BOUND)

    return frozenset(causes), margins


def check_lyapunov(cfg: MonitorConfig, sample: TrajectorySample) -> Tuple[float, bool]:
    """Evaluates V_dot on the sample.

    Returns:
        Tuple[float, bool]: Margin -V_dot and whether the sample violates V_dot < 0.
            Positive V_dot with ‖E‖ <= e_floor is benign.
    """
    E = np.asarray(sample.E, dtype=float)
    try:
        j_inv = j_inverse(cfg.plant, sample.eta, cfg.cond_cap)
        value, _ = v_dot(cfg.cert, E, sample.v, j_inv, sample.gamma, cfg.bounds.sigma)
    except DomainError:
        value = float(sample.V_dot)
    violated = value >= 0.0 and float(np.linalg.norm(E)) > cfg.e_floor
    return -value, violated


def evaluate_sample(
    cfg: MonitorConfig, sample: TrajectorySample
) -> Tuple[FrozenSet[Cause], Dict[str, float]]:
    """All violated causes of one sample with every margin."""
    causes, margins = check_assumptions(cfg, sample)
    margin, violated = check_lyapunov(cfg, sample)
    margins["lyapunov"] = margin
    if violated:
        causes = causes | {Cause.LYAPUNOV_POSITIVE}
    return causes, margins


def feed(
    cfg: MonitorConfig, state: MonitorState, sample: TrajectorySample
) -> Tuple[MonitorState, Optional[Transition]]:
    """Pure transition function of the verdict state machine.

    Stable -> Warning on the first violated sample; Warning -> Violation after
    debounce_n consecutive violated samples (counting the first one); Warning ->
    Stable after debounce_n consecutive clean samples. Violation is latched.
    With debounce_n == 1 the first violated sample moves Stable straight to
    Violation and a single Stable -> Violation transition is returned; no
    Warning transition is emitted.

    Raises:
        OutOfOrderSampleError: If the sample is older than the previous one.
    """
    t = float(sample.t)
    if state.last_t is not None and t < state.last_t:
        logging.error(f"Out-of-order sample t={t} after t={state.last_t}")
        raise OutOfOrderSampleError(f"sample at t={t} arrived after t={state.last_t}")
    seen = state.seen + 1
    if (seen - 1) % cfg.divider != 0:
        return replace(state, last_t=t, seen=seen), None

    causes, margins = evaluate_sample(cfg, sample)
    bad = bool(causes)
    current = state.verdict
    n = cfg.debounce_n

    if current == VerdictState.VIOLATION:
        return replace(state, last_t=t, seen=seen), None

    if bad:
        consecutive_bad = state.consecutive_bad + 1
        if current == VerdictState.STABLE:
            target = VerdictState.VIOLATION if n == 1 else VerdictState.WARNING
        else:
            target = VerdictState.VIOLATION if consecutive_bad >= n else VerdictState.WARNING
        new_state = MonitorState(target, consecutive_bad, 0, t, seen)
    else:
        consecutive_clean = state.consecutive_clean + 1
        target = current
        if current == VerdictState.WARNING and consecutive_clean >= n:
            target = VerdictState.STABLE
        new_state = MonitorState(target, 0, consecutive_clean, t, seen)

    if target == current:
        return new_state, None
    return new_state, Transition(
        t=t, from_state=current, to_state=target, causes=causes, margins=margins
    )


@dataclass
class MonitorReport:
    samples: int = 0
    worst: VerdictState = VerdictState.STABLE
    transitions: List[Transition] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.worst]


class StabilityMonitor:
    """Stateful wrapper around `feed` for one stream of samples.

    Args:
        cfg (MonitorConfig): Bounds, certificate and debouncing settings.
        sink (Optional[IO[str]]): Text stream receiving one JSON line per transition.
    """

    def __init__(self, cfg: MonitorConfig, sink: Optional[IO[str]] = None):
        self.cfg = cfg
        self.sink = sink
        self.state = MonitorState()
        self.report = MonitorReport()

    @property
    def verdict(self) -> VerdictState:
        return self.state.verdict

    def feed(self, sample: TrajectorySample) -> Optional[Transition]:
        self.state, transition = feed(self.cfg, self.state, sample)
        self.report.samples += 1
        if transition is None:
            return None
        self.report.transitions.append(transition)
        if SEVERITY[transition.to_state] > SEVERITY[self.report.worst]:
            self.report.worst = transition.to_state
        causes = ",".join(sorted(c.value for c in transition.causes)) or "-"
        message = (
            f"Verdict {transition.from_state.value} -> {transition.to_state.value} "
            f"at t={transition.t:.6f}s, causes: {causes}"
        )
        if transition.to_state == VerdictState.STABLE:
            logging.info(message)
        else:
            logging.warning(message)
        if self.sink is not None:
            self.sink.write(transition.to_json() + "\n")
            self.sink.flush()
        return transition

    def run(self, source: SampleSource) -> MonitorReport:
        logging.info(f"Monitoring {source.describe()}")
        for sample in source.samples():
            self.feed(sample)
        logging.info(
            f"Monitor finished: {self.report.samples} samples, worst verdict {self.report.worst.value}, "
            f"{len(self.report.transitions)} transitions"
        )
        return self.report

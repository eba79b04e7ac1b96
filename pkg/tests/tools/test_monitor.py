import io
import itertools
import json

import numpy as np
import pytest

from lyapguard.config import RunConfig, load_config
from lyapguard.tools import OutOfOrderSampleError
from lyapguard.tools.controller import Gains, ModelEstimates, RobustBounds
from lyapguard.tools.lyapunov import LyapunovCert
from lyapguard.tools.monitor import (
    Cause,
    MonitorConfig,
    MonitorState,
    StabilityMonitor,
    Verdict,
    VerdictState,
    causes_to_flags,
    check_assumptions,
    evaluate_sample,
    feed,
    flags_to_causes,
)
from lyapguard.tools.simulator import LiveSimulationSource
from lyapguard.tools.trajectory import LogSampleSource, TrajectoryLog, TrajectorySample


@pytest.fixture
def cert():
    return LyapunovCert.from_gains(Gains())


@pytest.fixture
def cfg(cert):
    return MonitorConfig(bounds=RobustBounds(), cert=cert, debounce_n=3)


def sample(t: float, **overrides) -> TrajectorySample:
    """A clean sample at level attitude; override fields to break assumptions."""
    fields = dict(
        t=t,
        eta=np.zeros(3),
        eta_dot=np.zeros(3),
        eta_d=np.zeros(3),
        eta_d_ddot=np.zeros(3),
        E=np.zeros(6),
        tau=np.zeros(3),
        omega=np.full(4, 600.0),
        d=np.zeros(3),
        v=np.zeros(3),
        gamma=np.zeros(3),
        V=0.0,
        V_dot=0.0,
        branch="boundary-layer",
    )
    fields.update({k: np.asarray(v, dtype=float) if isinstance(v, (list, tuple)) else v for k, v in overrides.items()})
    return TrajectorySample(**fields)


def bad(t: float) -> TrajectorySample:
    return sample(t, d=(0.1, 0.0, 0.0))


def run_states(cfg, samples):
    state = MonitorState()
    transitions = []
    for s in samples:
        state, transition = feed(cfg, state, s)
        if transition is not None:
            transitions.append(transition)
    return state, transitions


def test_clean_stream_stays_stable(cfg):
    state, transitions = run_states(cfg, [sample(k * 0.01) for k in range(20)])
    assert state.verdict == VerdictState.STABLE
    assert transitions == []


def test_debounce_escalates_to_violation(cfg):
    state, transitions = run_states(cfg, [bad(0.0), bad(0.1), bad(0.2), bad(0.3)])
    assert [(tr.from_state, tr.to_state) for tr in transitions] == [
        (VerdictState.STABLE, VerdictState.WARNING),
        (VerdictState.WARNING, VerdictState.VIOLATION),
    ]
    assert transitions[1].t == 0.2
    assert state.verdict == VerdictState.VIOLATION


def test_warning_recovers_after_clean_run(cfg):
    stream = [bad(0.0), sample(0.1), sample(0.2), sample(0.3)]
    state, transitions = run_states(cfg, stream)
    assert [tr.to_state for tr in transitions] == [VerdictState.WARNING, VerdictState.STABLE]
    assert transitions[-1].t == 0.3
    assert state.verdict == VerdictState.STABLE


def test_interrupted_bad_run_does_not_escalate(cfg):
    stream = [bad(0.0), bad(0.1), sample(0.2), bad(0.3), bad(0.4)]
    state, _ = run_states(cfg, stream)
    assert state.verdict == VerdictState.WARNING


def test_violation_is_latched(cfg):
    stream = [bad(0.0), bad(0.1), bad(0.2)] + [sample(0.3 + 0.1 * k) for k in range(10)]
    state, transitions = run_states(cfg, stream)
    assert state.verdict == VerdictState.VIOLATION
    assert len(transitions) == 2


def test_single_sample_debounce_goes_straight_to_violation(cert):
    cfg = MonitorConfig(bounds=RobustBounds(), cert=cert, debounce_n=1)
    state, transitions = run_states(cfg, [bad(0.0)])
    assert state.verdict == VerdictState.VIOLATION
    assert transitions[0].from_state == VerdictState.STABLE
    assert transitions[0].to_state == VerdictState.VIOLATION
    assert len(transitions) == 1


def test_divider_skips_samples(cert):
    cfg = MonitorConfig(bounds=RobustBounds(), cert=cert, debounce_n=1, divider=2)
    stream = [sample(0.0), bad(0.1), sample(0.2), bad(0.3)]
    state, transitions = run_states(cfg, stream)
    assert state.verdict == VerdictState.STABLE
    assert transitions == []
    assert state.seen == 4


def test_out_of_order_sample_rejected(cfg):
    state, _ = feed(cfg, MonitorState(), sample(1.0))
    state, _ = feed(cfg, state, sample(1.0))
    with pytest.raises(OutOfOrderSampleError):
        feed(cfg, state, sample(0.5))


def test_scaling_disturbance_never_raises_a_margin(cfg):
    rng = np.random.default_rng(11)
    for _ in range(200):
        base = dict(
            eta=[rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-3.0, 3.0)],
            eta_dot=rng.uniform(-1.0, 1.0, size=3),
            eta_d_ddot=rng.uniform(-1.0, 1.0, size=3),
            E=rng.normal(scale=0.3, size=6),
            v=rng.normal(scale=0.5, size=3),
            gamma=rng.normal(scale=0.01, size=3),
        )
        d = rng.normal(scale=0.02, size=3)
        c = float(rng.uniform(1.01, 5.0))
        _, before = evaluate_sample(cfg, sample(0.0, d=d, **base))
        _, after = evaluate_sample(cfg, sample(0.0, d=c * d, **base))
        for key in before.keys() & after.keys():
            assert after[key] <= before[key] + 1e-15, key
        for key in ("disturbance_total", "disturbance_raw", "disturbance_error"):
            assert after[key] < before[key]


def test_disturbance_cause_and_margins(cfg):
    causes, margins = evaluate_sample(cfg, bad(0.0))
    assert causes == {Cause.DISTURBANCE_BOUND}
    assert margins["disturbance_total"] < 0.0
    assert margins["disturbance_raw"] == pytest.approx(0.02 - 0.1)
    assert margins["lyapunov"] == 0.0


def test_non_strict_bounds_hold_at_equality(cfg):
    """‖d‖ = D and ‖d_hat - d‖ = D are admissible."""
    causes, margins = check_assumptions(cfg, sample(0.0, d=(0.02, 0.0, 0.0)))
    assert Cause.DISTURBANCE_BOUND not in causes
    assert margins["disturbance_raw"] == 0.0
    assert margins["disturbance_error"] == 0.0


def test_strict_bounds_fail_at_equality(cfg):
    causes, margins = check_assumptions(cfg, sample(0.0, eta_d_ddot=(3.0, 4.0, 0.0)))
    assert Cause.REF_ACCEL_BOUND in causes
    assert margins["ref_accel"] == 0.0
    causes, margins = check_assumptions(cfg, sample(0.0, eta=(1.4, 0.0, 0.0)))
    assert Cause.ENVELOPE_EXIT in causes
    assert margins["envelope_roll"] == 0.0


def test_inertia_mismatch_cause(cert):
    cfg = MonitorConfig(bounds=RobustBounds(xi=0.2), cert=cert, estimates=ModelEstimates(mismatch=0.3))
    causes, margins = check_assumptions(cfg, sample(0.0))
    assert Cause.INERTIA_MISMATCH_BOUND in causes
    assert margins["inertia_mismatch"] == pytest.approx(-0.1)


def test_delta_n_cause(cert):
    cfg = MonitorConfig(bounds=RobustBounds(S=1e-6), cert=cert, estimates=ModelEstimates(mismatch=0.1))
    causes, _ = check_assumptions(cfg, sample(0.0, eta=(0.3, 0.2, 0.0), eta_dot=(2.0, -1.5, 1.0)))
    assert Cause.DELTA_N_BOUND in causes


def test_j_inverse_norm_cause(cert):
    cfg = MonitorConfig(bounds=RobustBounds(beta_min=300.0), cert=cert)
    causes, margins = check_assumptions(cfg, sample(0.0))
    assert Cause.J_INV_NORM_BOUND in causes
    assert margins["j_inv_lower"] == pytest.approx(1.0 / 4.856e-3 - 300.0)


def test_lyapunov_cause(cfg):
    s = sample(0.0, E=(1.0, 0.0, 0.0, 0.0, 0.0, 0.0), v=(100.0, 0.0, 0.0))
    causes, margins = evaluate_sample(cfg, s)
    assert Cause.LYAPUNOV_POSITIVE in causes
    assert margins["lyapunov"] < 0.0


def test_small_error_positive_v_dot_is_benign(cfg):
    s = sample(0.0, E=(1e-4, 0.0, 0.0, 0.0, 0.0, 0.0), v=(100.0, 0.0, 0.0))
    causes, margins = evaluate_sample(cfg, s)
    assert causes == frozenset()
    assert margins["lyapunov"] < 0.0


def test_cause_flags():
    bits = [c.bit for c in Cause]
    assert len(set(bits)) == len(bits)
    causes = {Cause.DISTURBANCE_BOUND, Cause.ENVELOPE_EXIT}
    assert flags_to_causes(causes_to_flags(causes)) == causes
    assert causes_to_flags([]) == 0


def test_verdict_requires_consistent_causes():
    with pytest.raises(ValueError):
        Verdict(state=VerdictState.VIOLATION, causes=frozenset(), t=0.0)
    with pytest.raises(ValueError):
        Verdict(state=VerdictState.STABLE, causes=frozenset({Cause.ENVELOPE_EXIT}), t=0.0)


def test_transition_json(cfg):
    _, transitions = run_states(cfg, [sample(0.0, d=(0.1, 0.0, 0.0), eta=(1.45, 0.0, 0.0))])
    record = json.loads(transitions[0].to_json())
    assert set(record) == {"t", "from", "to", "causes", "margins"}
    assert record["from"] == "Stable" and record["to"] == "Warning"
    assert record["causes"] == ["DisturbanceBound", "EnvelopeExit"]
    assert list(record["margins"]) == sorted(record["margins"])
    assert transitions[0].verdict.state == VerdictState.WARNING


def test_stability_monitor_writes_ndjson(cfg):
    sink = io.StringIO()
    log = TrajectoryLog(samples=[bad(0.0), bad(0.1), bad(0.2), sample(0.3)])
    report = StabilityMonitor(cfg, sink).run(LogSampleSource(log))
    lines = sink.getvalue().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[-1])["to"] == "Violation"
    assert report.samples == 4
    assert report.worst == VerdictState.VIOLATION
    assert report.exit_code == 20


def test_warning_only_report_exit_code(cfg):
    monitor = StabilityMonitor(cfg)
    for s in [bad(0.0), sample(0.1), sample(0.2), sample(0.3)]:
        monitor.feed(s)
    assert monitor.verdict == VerdictState.STABLE
    assert monitor.report.worst == VerdictState.WARNING
    assert monitor.report.exit_code == 10


def make_config(**sections) -> RunConfig:
    data = load_config().model_dump(mode="json")
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return RunConfig.model_validate(data)


def monitor_run(run_cfg: RunConfig):
    cert = run_cfg.build_certificate()
    simulator = run_cfg.build_simulator(cert)
    source = LiveSimulationSource(simulator)
    report = StabilityMonitor(run_cfg.monitor_config(cert)).run(source)
    return report, source.log


@pytest.mark.slow
@pytest.mark.parametrize("mismatch", [-0.05, 0.0, 0.05])
def test_in_bound_scenarios_never_violate(mismatch):
    for roll, amplitude in itertools.product([-0.15, 0.0, 0.15], [0.0, 0.03, 0.05]):
        run_cfg = make_config(
            scenario={
                "duration": 0.5,
                "dt": 1e-3,
                "initial": {"eta": [roll, -0.05, 0.02], "eta_dot": [0.0, 0.0, 0.0]},
                "reference": {
                    "axes": [
                        {"kind": "sinusoid", "amplitude": amplitude, "frequency_hz": 0.5},
                        {"kind": "sinusoid", "amplitude": amplitude, "frequency_hz": 0.5, "phase": 1.5707963},
                        {"kind": "constant"},
                    ]
                },
                "disturbance": [{"kind": "gust", "start": 0.1, "width": 0.3, "peak": [1e-4, -1e-4, 0.0]}],
                "mismatch": mismatch,
            }
        )
        report, _ = monitor_run(run_cfg)
        assert report.worst != VerdictState.VIOLATION, (roll, amplitude, mismatch)


@pytest.mark.slow
def test_excessive_gust_is_detected():
    """A gust pushing ‖d‖ + D past D_bar raises Violation within debounce_n + 1 samples."""
    run_cfg = make_config(
        scenario={
            "duration": 1.0,
            "dt": 1e-3,
            "disturbance": [{"kind": "gust", "start": 0.2, "width": 0.4, "peak": [2e-3, 0.0, 0.0]}],
        }
    )
    report, log = monitor_run(run_cfg)
    assert report.exit_code == 20
    flagged = [k for k, row in enumerate(log) if row.assumption_flags & Cause.DISTURBANCE_BOUND.bit]
    assert flagged
    first = flagged[0]
    violation = next(tr for tr in report.transitions if tr.to_state == VerdictState.VIOLATION)
    n = run_cfg.monitor.debounce_n
    assert violation.t <= log.samples[first + n].t

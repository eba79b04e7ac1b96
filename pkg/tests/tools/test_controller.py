import math

import numpy as np
import pytest
from pydantic import ValidationError

from lyapguard.tools import TemplateError
from lyapguard.tools.controller import (
    ConstantAxis,
    Gains,
    ModelEstimates,
    Reference,
    RobustAttitudeController,
    RobustBounds,
    SinusoidAxis,
    StepAxis,
    VBoundTemplate,
    control_tau,
    control_u,
    delta_gain,
    error_state,
    gamma,
    uncertainty_v,
    v_bound,
)
from lyapguard.tools.dynamics import EulerState, PlantParams, attitude_accel, j_inverse, n_term
from lyapguard.tools.lyapunov import LyapunovCert


@pytest.fixture
def plant():
    return PlantParams()


@pytest.fixture
def gains():
    return Gains()


@pytest.fixture
def bounds():
    return RobustBounds()


@pytest.fixture
def cert(gains):
    return LyapunovCert.from_gains(gains)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_gains_reject_non_positive():
    with pytest.raises(ValidationError):
        Gains(K_eta=(1.0, 0.0, 1.0))
    with pytest.raises(ValidationError):
        Gains(K_r=(1.0, 1.0, float("nan")))


def test_robust_bounds_reject_unsatisfiable_disturbance_bound():
    with pytest.raises(ValidationError, match="‖d‖ \\+ D < D_bar"):
        RobustBounds(D=0.1, D_bar=0.1)


def test_robust_bounds_reject_beta_order():
    with pytest.raises(ValidationError):
        RobustBounds(beta_min=500.0, beta_max=400.0)


def test_error_state_and_control_u(gains):
    ref = Reference(axes=(ConstantAxis(value=0.1), ConstantAxis(value=-0.2), ConstantAxis()))
    state = EulerState(eta=(0.0, 0.0, 0.1), eta_dot=(0.5, 0.0, 0.0))
    E = error_state(state, ref, 0.0)
    assert np.allclose(E, [0.1, -0.2, -0.1, -0.5, 0.0, 0.0])
    u = control_u(np.zeros(3), gains, E)
    expected = np.array(gains.K_r) * E[3:] + np.array(gains.K_eta) * E[:3]
    assert np.allclose(u, expected)


def test_reference_sinusoid_derivatives():
    axis = SinusoidAxis(offset=0.1, amplitude=0.2, frequency_hz=0.5, phase=0.3)
    ref = Reference(axes=(axis, ConstantAxis(), StepAxis(initial=0.0, final=0.4, step_time=1.0)))
    h = 1e-5
    t = 0.7
    eta, eta_dot, eta_ddot = ref.at(t)
    eta_p, eta_dot_p, _ = ref.at(t + h)
    eta_m, eta_dot_m, _ = ref.at(t - h)
    assert eta_dot[0] == pytest.approx((eta_p[0] - eta_m[0]) / (2 * h), rel=1e-7)
    assert eta_ddot[0] == pytest.approx((eta_dot_p[0] - eta_dot_m[0]) / (2 * h), rel=1e-6)
    assert ref.at(0.5)[0][2] == 0.0
    assert ref.at(1.5)[0][2] == 0.4


def test_reference_sup_accel_norm():
    ref = Reference(axes=(SinusoidAxis(amplitude=0.05, frequency_hz=0.5), ConstantAxis(), ConstantAxis()))
    times = np.linspace(0.0, 2.0, 2001)
    assert ref.sup_accel_norm(times) == pytest.approx(0.05 * math.pi**2, rel=1e-6)


def test_gamma_norm_bounded_by_delta(bounds, cert, rng):
    for _ in range(10_000):
        E = rng.normal(scale=10.0 ** rng.uniform(-9, 1), size=6)
        delta = float(rng.uniform(0.0, 5.0))
        assert np.linalg.norm(gamma(bounds, cert, E, delta)) <= delta * (1 + 1e-12)


def test_gamma_continuous_at_boundary_layer(cert, gains):
    """Both forms agree where ‖Bᵀ Q E‖ equals sigma."""
    bounds = RobustBounds(sigma=1e-3)
    direction = np.array([0.3, -0.2, 0.1, 0.4, 0.0, -0.5])
    s = cert.B.T @ cert.Q @ direction
    E = direction * (bounds.sigma / np.linalg.norm(s))
    below = E * (1 - 1e-13)
    delta = 2.5
    at = gamma(bounds, cert, E, delta)
    inside = gamma(bounds, cert, below, delta)
    assert np.linalg.norm(at - inside) < 1e-12
    assert np.linalg.norm(at) == pytest.approx(delta, rel=1e-12)


def test_gamma_zero_at_origin(bounds, cert):
    assert np.array_equal(gamma(bounds, cert, np.zeros(6), 1.0), np.zeros(3))


def test_gamma_rejects_negative_delta(bounds, cert):
    with pytest.raises(ValueError):
        gamma(bounds, cert, np.ones(6), -1.0)


def test_v_bound_matches_printed_coefficients():
    template = VBoundTemplate(
        xi=0.5, H=1.2, a=(0.004, 0.004, 0.482675), b=(17.5, 17.5, 1.8), beta_max=173.0, S=0.001, D=0.001
    )
    E = np.array([1.6, 3.1, 2.0, 9.3, 6.8, 4.8])
    vb = v_bound(template, E)
    first = 0.5 * (1.2 + 0.004 * 9.3 + 17.5 * 1.6) + 173 * (0.001 + 0.001)
    assert vb[0] == pytest.approx(first, rel=1e-12)
    assert vb[2] == pytest.approx(0.5 * (1.2 + 0.482675 * 4.8 + 1.8 * 2.0) + 0.346, rel=1e-12)


def test_template_check_rejects_bad_coefficients():
    with pytest.raises(TemplateError):
        VBoundTemplate(xi=1.5, H=1.0, a=(1, 1, 1), b=(1, 1, 1), beta_max=1, S=0, D=0).check()
    with pytest.raises(TemplateError):
        VBoundTemplate(xi=0.5, H=1.0, a=(1, -1, 1), b=(1, 1, 1), beta_max=1, S=0, D=0).check()


def test_template_from_gains(bounds, gains):
    template = VBoundTemplate.from_gains(bounds, gains)
    assert template.a == gains.K_r
    assert template.b == gains.K_eta
    assert template.beta_max == bounds.beta_max


def test_delta_gain(bounds):
    assert delta_gain(bounds, (3.0, 4.0, 0.0)) == pytest.approx(5.0 / bounds.beta_min)
    with pytest.raises(ValueError):
        delta_gain(bounds, (-1.0, 0.0, 0.0))


def test_closed_loop_identity(plant, bounds, cert, rng):
    """eta_ddot under the control law equals u - v + J⁻¹ gamma."""
    for _ in range(1000):
        state = EulerState(eta=rng.uniform(-1.2, 1.2, size=3), eta_dot=rng.uniform(-2, 2, size=3))
        est = ModelEstimates(
            plant=plant, mismatch=float(rng.uniform(0.0, 0.3)), d_hat=rng.normal(scale=0.01, size=3)
        )
        u = rng.normal(scale=5.0, size=3)
        E = rng.normal(size=6)
        d = rng.normal(scale=0.02, size=3)
        gam = gamma(bounds, cert, E, float(rng.uniform(0.0, 0.05)))
        tau = control_tau(est, u, gam, state)
        acc = attitude_accel(plant, state, tau, d)
        v = uncertainty_v(plant, est, state, u, d)
        expected = u - v + j_inverse(plant, state.eta) @ gam
        assert np.linalg.norm(acc - expected) < 1e-8


def test_uncertainty_vanishes_for_exact_model(plant, rng):
    est = ModelEstimates(plant=plant, mismatch=0.0, d_hat=(0.01, 0.0, -0.02))
    state = EulerState(eta=(0.3, -0.4, 0.2), eta_dot=(1.0, -0.5, 0.3))
    v = uncertainty_v(plant, est, state, rng.normal(size=3), (0.01, 0.0, -0.02))
    assert np.linalg.norm(v) < 1e-12


def test_controller_command(plant, gains, bounds, cert):
    controller = RobustAttitudeController(gains, bounds, cert, ModelEstimates(plant=plant))
    ref = Reference(axes=(ConstantAxis(value=0.1), ConstantAxis(), ConstantAxis()))
    out = controller.command(EulerState(eta=(0.0, 0.0, 0.0)), ref, 0.0)
    assert out.E[0] == pytest.approx(0.1)
    assert out.delta == pytest.approx(np.linalg.norm(out.vb) / bounds.beta_min)
    assert np.linalg.norm(out.gamma) <= out.delta + 1e-15
    assert out.tau.vec[0] > 0.0


def test_v_bounded_by_template_inside_envelope(plant, gains):
    """‖v‖ <= ‖v_bound(E)‖ whenever mismatch, disturbance and N error respect the bounds."""
    bounds = RobustBounds(D=2e-4, D_bar=1e-3, S=1e-3, H=1.0, xi=0.1, beta_min=60.0, beta_max=400.0)
    template = VBoundTemplate.from_gains(bounds, gains)
    rng = np.random.default_rng(7)
    accepted = 0
    for _ in range(5000):
        eta = (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-math.pi, math.pi))
        state = EulerState(eta=eta, eta_dot=rng.uniform(-0.5, 0.5, size=3))
        est = ModelEstimates(plant=plant, mismatch=float(rng.uniform(0.0, bounds.xi)))
        if np.linalg.norm(j_inverse(plant, state.eta), 2) > bounds.beta_max:
            continue
        if np.linalg.norm(est.n_hat(state) - n_term(plant, state)) > bounds.S:
            continue
        direction = rng.normal(size=3)
        d = bounds.D * float(rng.uniform(0.0, 1.0)) * direction / np.linalg.norm(direction)
        E = rng.normal(scale=0.5, size=6)
        u = control_u(rng.uniform(-0.5, 0.5, size=3), gains, E)
        v = uncertainty_v(plant, est, state, u, d)
        assert np.linalg.norm(v) <= np.linalg.norm(v_bound(template, E)) + 1e-12
        accepted += 1
        if accepted == 1000:
            break
    assert accepted == 1000

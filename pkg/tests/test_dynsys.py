import numpy as np
import pytest
from hypothesis import given, strategies as st

from goodparams.dynsys import (
    SIR,
    SeirCovidModel,
    SeirCovidParams,
    SeirCovidRates,
    SirParams,
    StateError,
    Trajectory,
    get_model,
    rates_from_params,
    seir_step,
    simulate,
    simulate_batch,
    sir_step,
)

THETA_STAR = SirParams(0.25, 1 / 21)
X0 = (0.95, 0.05, 0.0)


def test_sir_step_hand_arithmetic():
    out = sir_step(X0, THETA_STAR)
    np.testing.assert_allclose(out, [0.9381250, 0.05949405, 0.00238095], atol=5e-9)


@pytest.mark.parametrize("state", [(1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.3, 0.0, 0.7)])
def test_sir_disease_free_fixed_points(state):
    assert np.array_equal(sir_step(state, SirParams(0.9, 0.2)), np.array(state))


@pytest.mark.parametrize("state", [(0.5, 0.5), (0.6, 0.5, 0.0), (1.2, -0.2, 0.0)])
def test_sir_step_rejects_bad_states(state):
    with pytest.raises(StateError):
        sir_step(state, THETA_STAR)


def test_seir_step_hand_arithmetic():
    rates = SeirCovidRates(beta=0.3, gamma_I=0.25, gamma_S=0.05, nu_R=0.05, nu_RS=0.05,
                           delta_death=0.01, population_N=1e6)
    S, E, I, Is, R, D = seir_step((999_900, 0, 100, 0, 0, 0), rates)
    assert E == pytest.approx(29.997)
    assert S == pytest.approx(999_900 - 29.997)
    assert I == pytest.approx(90)
    assert Is == pytest.approx(5)
    assert R == pytest.approx(5)
    assert D == 0


def test_seir_step_without_transmission_only_drains_recorded():
    rates = SeirCovidRates(0.4, 0.25, 0.05, 0.05, 0.07, 0.01, 1e6)
    x = np.array([900_000, 0, 0, 1000, 98_000, 1000.0])
    out = seir_step(x, rates)
    assert out[0] == x[0] and out[1] == 0 and out[2] == 0
    assert out[3] == pytest.approx(1000 * (1 - 0.08))
    assert out[4] - x[4] == pytest.approx(70)
    assert out[5] - x[5] == pytest.approx(10)


def test_seir_step_population_exhausted():
    rates = SeirCovidRates(0.4, 0.25, 0.05, 0.05, 0.07, 0.01, 100)
    with pytest.raises(StateError):
        seir_step((0, 0, 0, 0, 0, 100), rates)


def test_rates_from_params():
    r = rates_from_params(SeirCovidParams(0.3, 4, 10, 5, 14, 25, 0.1, 0.02), 1e6)
    assert r.gamma_I == 0.25
    assert r.gamma_S == pytest.approx(0.02)
    assert r.delta_death == pytest.approx(0.0008)
    assert r.nu_R == pytest.approx(0.9 / 10)
    assert r.nu_RS == pytest.approx(0.98 / 14)
    assert rates_from_params(SeirCovidParams(0.3, 4, 10, 5, 14, 25, 1.0), 1e6).nu_R == 0


@pytest.mark.parametrize(
    "kwargs",
    [dict(beta=0), dict(tau_E=0), dict(p_S=0), dict(p_S=1.5), dict(p_D=-0.1), dict(p_D=1.1)],
)
def test_seir_params_invariants(kwargs):
    base = dict(beta=0.3, tau_E=4, tau_R=10, tau_S=5, tau_RS=14, tau_D=25, p_S=0.1, p_D=0.02)
    with pytest.raises(ValueError):
        SeirCovidParams(**{**base, **kwargs})


def test_sir_peak_day():
    traj = simulate(SIR, THETA_STAR, X0, 40, start_time=1)
    assert len(traj) == 41
    assert traj.days[np.argmax(traj.component("I"))] == 24


def test_horizon_zero_is_initial_state():
    traj = simulate(SIR, THETA_STAR, X0, 0)
    assert len(traj) == 1 and np.array_equal(traj.states[0], X0)


def test_sir_conservation_over_ten_days():
    traj = simulate(SIR, THETA_STAR, X0, 10)
    assert np.all(np.abs(traj.states.sum(axis=1) - 1) <= 1e-9)


def test_simulate_reports_failing_day():
    with pytest.raises(StateError) as exc:
        simulate(SIR, SirParams(30.0, 0.1), X0, 5, start_time=1)
    assert exc.value.day == 2


def test_get_model():
    assert get_model("sir") is SIR
    assert get_model("seir-covid", 1e5).population_N == 1e5
    with pytest.raises(ValueError):
        get_model("sird")


def test_trajectory_window_uses_day_labels():
    traj = simulate(SIR, THETA_STAR, X0, 10, start_time=1)
    w = traj.window(1, 10)
    assert w.shape == (10, 3) and np.array_equal(w[0], X0)
    assert traj.covers(1, 11) and not traj.covers(0, 5)


@given(beta=st.floats(0.01, 1.0), gamma=st.floats(0.001, 0.5), i0=st.floats(0.0, 0.5))
def test_sir_properties(beta, gamma, i0):
    x0 = (1 - i0, i0, 0.0)
    traj = simulate(SIR, SirParams(beta, gamma), x0, 30)
    s = traj.states
    assert np.all(np.abs(s.sum(axis=1) - 1) <= 1e-9)
    assert np.all(np.diff(s[:, 0]) <= 0) and np.all(np.diff(s[:, 2]) >= 0)
    again = simulate(SIR, SirParams(beta, gamma), x0, 30)
    assert np.array_equal(s, again.states)


# beta <= 1 keeps every daily outflow fraction at most 1, so states stay non-negative.
@given(
    beta=st.floats(0.05, 1.0),
    taus=st.lists(st.integers(1, 28), min_size=5, max_size=5),
    p_S=st.floats(0.01, 1.0),
    p_D=st.floats(0.0, 1.0),
)
def test_seir_properties(beta, taus, p_S, p_D):
    model = SeirCovidModel(1e6)
    params = SeirCovidParams(beta, *taus, p_S, p_D)
    traj = simulate(model, params, (999_000, 500, 300, 150, 40, 10), 60)
    s = traj.states
    assert np.all(np.abs(s.sum(axis=1) - 1e6) <= 1e-6 * 1e6)
    assert np.all(np.diff(s[:, 4]) >= 0) and np.all(np.diff(s[:, 5]) >= 0)


def test_seir_overshoot_raises():
    model = SeirCovidModel(1e6)
    with pytest.raises(StateError) as info:
        simulate(model, SeirCovidParams(1.5, 1, 1, 1, 1, 1, 1.0, 1.0), (999_000, 500, 300, 150, 40, 10), 60)
    assert 0 < info.value.day <= 60


def test_batch_matches_scalar_bitwise():
    model = SeirCovidModel(1e6)
    rows = np.array([[0.3, 5, 7, 6, 14, 14, 0.2, 0.02], [0.8, 4, 10, 3, 20, 9, 0.5, 0.1]])
    x0 = np.array([999_000, 500, 300, 150, 40, 10.0])
    batch = simulate_batch(model, rows, x0, 50)
    for row, traj in zip(rows, batch):
        assert np.array_equal(simulate(model, row, x0, 50).states, traj)


def test_trajectory_requires_states():
    with pytest.raises(ValueError):
        Trajectory(np.empty((0, 3)), ("S", "I", "R"))

"""Power flow, trapezoidal integration and event handling."""

import numpy as np
import pytest

from cfsim import (
    Branch,
    Bus,
    Event,
    EventError,
    Grid,
    InitError,
    StaticLoad,
    SynMachine,
    run_case,
    solve_power_flow,
)
from cfsim.network import branch_flows, bus_injections

from conftest import fresh_case


def slack_machine(bus=0, v_set=1.0, **kw):
    params = dict(
        bus=bus, order=2, slack=True, v_set=v_set, h=5.0, ra=0.0,
        xd=0.2, xq=0.15, xd1=0.1, xq1=0.15, governor=None, avr=None,
    )
    params.update(kw)
    return SynMachine(**params)


# -- power flow ----------------------------------------------------------------


def test_two_bus_power_flow_against_bisection_oracle():
    """Slack 1.0 at bus 1, line j0.1, 0.1 pu load: the solution matches a
    1-D bisection on the exact two-bus equations."""
    grid = Grid(buses=[Bus(0), Bus(1)], branches=[Branch(0, 1, x=0.1)])
    devices = [slack_machine(), StaticLoad(bus=1, p0=0.1, q0=0.0)]
    sim = solve_power_flow(grid, devices)

    # oracle: for the lossless line b = 10, the exact bus-2 balance is
    #   q: 10 v2^2 - 10 v2 cos(th2) = 0        -> v2 = cos(th2)
    #   p: 10 v2 sin(th2) = -0.1 (consumption) -> bisect the residual
    def p_resid(th2):
        return 10.0 * np.cos(th2) * np.sin(th2) + 0.1

    lo, hi = -0.5, 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if p_resid(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    th2 = 0.5 * (lo + hi)
    assert sim.theta[1] == pytest.approx(th2, abs=1e-9)
    assert sim.v[1] == pytest.approx(np.cos(th2), abs=1e-9)
    assert th2 == pytest.approx(-0.01002, abs=2e-4)


def test_zero_load_network_gives_flat_solution():
    grid = Grid(
        buses=[Bus(k) for k in range(3)],
        branches=[Branch(0, 1, x=0.1), Branch(1, 2, x=0.2)],
    )
    devices = [slack_machine()]
    sim = solve_power_flow(grid, devices)
    assert np.abs(sim.v - 1.0).max() < 1e-12
    assert np.abs(sim.theta).max() < 1e-12
    vbar = sim.v * np.exp(1j * sim.theta)
    assert np.abs(bus_injections(sim.Y, vbar)).max() < 1e-12


def test_wscc_power_flow_converges_fast_and_matches_published_solution():
    grid, devices = fresh_case("wscc9").build()
    sim = solve_power_flow(grid, devices)
    assert sim.pf_iterations <= 6
    # published magnitudes/angles for the standard case
    v_ref = [1.040, 1.025, 1.025, 1.0258, 0.9956, 1.0127, 1.0258, 1.0159, 1.0324]
    th_ref = [0.0, 9.28, 4.665, -2.217, -3.989, -3.687, 3.720, 0.728, 1.967]
    assert np.abs(sim.v - v_ref).max() < 2e-3
    assert np.abs(np.degrees(sim.theta) - th_ref).max() < 0.05
    assert np.max(np.abs(sim.xdot)) < 1e-9
    assert sim.g_norm() < 1e-10


def test_power_flow_requires_single_slack():
    grid, devices = fresh_case("wscc9").build()
    for dev in devices:
        if isinstance(dev, SynMachine):
            dev.slack = False
    with pytest.raises(InitError):
        solve_power_flow(grid, devices)


# -- integration ---------------------------------------------------------------


def test_equilibrium_is_a_fixed_point(equilibrium_run):
    """No events: every recorded quantity stays at its initial value."""
    traj = equilibrium_run.traj
    assert np.abs(traj.v - traj.v[0]).max() < 1e-10
    assert np.abs(traj.theta - traj.theta[0]).max() < 1e-10
    assert np.abs(traj.x - traj.x[0]).max() < 1e-10


def test_smib_small_signal_matches_linearized_oscillator():
    """A small rotor-angle kick rings at the frequency/damping of the 2x2
    linearization (eigenvalue computed from a finite-difference stiffness)."""
    grid = Grid(buses=[Bus(0), Bus(1)], branches=[Branch(0, 1, x=0.5)])
    inf_bus = slack_machine(h=1e6, xd=2e-3, xq=1.5e-3, xd1=1e-3, xq1=1.5e-3)
    mach = SynMachine(
        bus=1, order=2, h=3.0, d=1.0, ra=0.0, xd=0.3, xq=0.3, xd1=0.3, xq1=0.3,
        p_set=0.8, v_set=1.0, governor=None, avr=None,
    )
    devices = [inf_bus, mach]
    sim = solve_power_flow(grid, devices)
    sim.dt = 1e-3
    sl = sim._slices[1]

    # finite-difference synchronizing coefficient K = d t_e / d delta
    def te_at(ddelta):
        x = sim.x.copy()
        x[sl][0] += ddelta
        s2 = solve_power_flow(*_rebuild())
        s2.x = x
        s2.resolve_algebraic()
        vbar = s2.v * np.exp(1j * s2.theta)
        return mach.electrical_torque(x[sl], complex(vbar[1]))

    def _rebuild():
        return grid, devices

    h = 1e-6
    K = (te_at(h) - te_at(-h)) / (2 * h)
    w0, H, D = grid.omega0, mach.h, mach.d
    lam = np.roots([1.0, D / (2 * H), w0 * K / (2 * H)])
    sigma = lam[0].real
    wd = abs(lam[0].imag)

    d0 = 1e-3
    sim2 = solve_power_flow(grid, devices)
    sim2.dt = 1e-3
    sim2.x[sl.start] += d0
    delta_eq = sim2.x[sl.start] - d0
    sim2.resolve_algebraic()
    period = 2 * np.pi / wd
    traj = sim2.run(period)
    ddelta = traj.x[:, sl.start] - delta_eq
    t = traj.t
    ref = d0 * np.exp(sigma * t) * (np.cos(wd * t) - (sigma / wd) * np.sin(wd * t))
    err = np.abs(ddelta - ref).max() / d0
    print(f"\n  SMIB linearization: f={wd / (2 * np.pi):.3f} Hz, "
          f"sigma={sigma:.4f}, rel err over one period = {err:.3%}")
    assert err < 0.02


def test_load_trip_raises_rotor_speeds(scenario):
    """Dropping the bus-5 load leaves surplus generation: speeds rise."""
    res = scenario("wscc9", tend=2.0)
    traj = res.traj
    t = traj.t
    for name in ("mach1.w", "mach2.w", "mach3.w"):
        w = traj.state(name)
        assert np.abs(w[t <= 1.0] - 1.0).max() < 1e-10
        assert w[t > 1.2].max() > 1.0 + 1e-4


def test_g_residual_small_at_every_step(scenario):
    res = scenario("wscc9", tend=2.0)
    sim = res.sim
    assert sim.g_norm() < 1e-8


def test_trajectory_convergence_is_second_order():
    """Halving dt scales the trajectory difference by ~4 (trapezoidal)."""
    sols = {}
    for dt in (1e-3, 5e-4, 2.5e-4):
        case = fresh_case("wscc9")
        res = run_case(case, tend=1.5, dt=dt)
        stride = round(1e-3 / dt)
        sols[dt] = res.traj.theta[::stride]
    e1 = np.abs(sols[1e-3] - sols[5e-4]).max()
    e2 = np.abs(sols[5e-4] - sols[2.5e-4]).max()
    print(f"\n  dt-halving errors: {e1:.3e} -> {e2:.3e}, ratio {e1 / e2:.2f}")
    assert 3.0 < e1 / e2 < 5.0


def test_active_power_balance_every_step(scenario):
    """Sum of bus injections equals the sum of branch losses at all steps."""
    res = scenario("wscc9", tend=2.0)
    traj, sim = res.traj, res.sim
    worst = 0.0
    for k in range(0, len(traj.t), 7):
        vbar = traj.vbar[k]
        p_inj = bus_injections(sim.Y, vbar).real.sum()
        sf, st = branch_flows(sim.grid, None, vbar)
        worst = max(worst, abs(p_inj - (sf + st).real.sum()))
    print(f"\n  worst active-power imbalance: {worst:.2e}")
    assert worst < 1e-8


def test_trapezoidal_time_reversal():
    """Forward dt then backward dt returns the state (lossless, undamped)."""
    grid = Grid(buses=[Bus(0), Bus(1)], branches=[Branch(0, 1, x=0.4)])
    devices = [
        slack_machine(h=50.0),
        SynMachine(bus=1, order=2, h=4.0, d=0.0, ra=0.0, xd=0.25, xq=0.25,
                   xd1=0.25, xq1=0.25, p_set=0.5, v_set=1.0,
                   governor=None, avr=None),
    ]
    sim = solve_power_flow(grid, devices)
    sim.dt = 1e-3
    sl = sim._slices[1]
    sim.x[sl.start] += 0.2  # well off equilibrium
    sim.resolve_algebraic()
    x0, th0, v0 = sim.x.copy(), sim.theta.copy(), sim.v.copy()
    for _ in range(20):
        sim.step(1e-3)
    for _ in range(20):
        sim.step(-1e-3)
    err = max(
        np.abs(sim.x - x0).max(),
        np.abs(sim.theta - th0).max(),
        np.abs(sim.v - v0).max(),
    )
    print(f"\n  reversal error after 20 steps each way: {err:.2e}")
    assert err < 1e-9


# -- events ---------------------------------------------------------------------


def test_tripping_out_of_service_line_is_noop():
    grid, devices = fresh_case("wscc9").build()
    grid.branch(4, 6).status = False
    sim = solve_power_flow(grid, devices)
    changed = sim.apply_event(Event(t=0.0, kind="line_trip", from_bus=4, to_bus=6))
    assert not changed
    assert sim.event_log == []


def test_fractional_load_reduction_scales_setpoint(scenario):
    """A 15 % reduction leaves the load at 85 % of its scheduled power."""
    res = scenario("wscc9_vdl")
    sim, traj = res.sim, res.traj
    load5 = [d for d in sim.devices if getattr(d, "name", "") == "load5"][0]
    assert load5.scale == pytest.approx(0.85)
    k = len(traj.t) - 1
    vb = complex(traj.vbar[k, 4])
    s = load5.injection(None, vb)
    v_ratio = abs(vb) / load5.v_anchor
    assert s.real == pytest.approx(-0.85 * 1.25 * v_ratio**2, rel=1e-12)


def test_fault_scenario_dips_voltage_and_recovers(scenario):
    """Bus-7 fault: deep voltage dip while applied, recovery after clearing,
    machines stay in synchronism."""
    res = scenario("wscc9_fault")
    traj = res.traj
    t = traj.t
    during = (t >= 1.001) & (t <= 1.082)
    after = t > 2.5
    assert traj.v[during, 6].max() < 0.05
    assert traj.v[after, 6].min() > 0.9
    d21 = traj.state("mach2.delta") - traj.state("mach1.delta")
    assert np.abs(d21).max() < np.pi  # no pole slip
    assert traj.event_flag.sum() == 2  # fault on; clear + trip together


def test_event_rows_are_flagged_once_each(scenario):
    res = scenario("wscc9", tend=2.0)
    traj = res.traj
    flagged = np.flatnonzero(traj.event_flag)
    assert len(flagged) == 1
    assert traj.t[flagged[0]] == pytest.approx(1.0)


def test_islanding_event_raises_event_error():
    grid, devices = fresh_case("wscc9").build()
    sim = solve_power_flow(grid, devices)
    sim.dt = 1e-3
    with pytest.raises(EventError):
        sim.run(0.2, events=[Event(t=0.1, kind="line_trip", from_bus=0, to_bus=3)])


def test_set_step_event_changes_governor_reference():
    grid, devices = fresh_case("wscc9").build()
    sim = solve_power_flow(grid, devices)
    sim.dt = 1e-3
    mach2 = sim.devices[1]
    p0 = mach2.p_ref
    sim.run(0.05, events=[Event(t=0.02, kind="set_step", bus=1, param="p_ref",
                                delta=0.1)])
    assert mach2.p_ref == pytest.approx(p0 + 0.1)

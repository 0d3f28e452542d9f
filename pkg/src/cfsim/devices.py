"""Device models: synchronous machines, static loads, voltage-dependent
loads, converter-interfaced generators and the SRF-PLL frequency estimator.

Every grid-connected device implements two contracts:

* the DAE contract -- ``f(x, vbar)`` returns its state derivatives and
  ``injection(x, vbar)`` the complex power it injects at its bus (+ for
  generation, - for consumption);

* the complex-frequency contract -- at an accepted integration step the
  device expresses the time derivative of its current injection as a linear
  function of the local complex frequency,

      di/dt = c_rho * rho_h + c_omega * omega_h + c_0,

  with complex coefficients (``idot_coeffs``), and equivalently the
  derivative of its power injection (``sdot_coeffs``).  These rows are the
  device-side boundary conditions of the network complex-frequency system.

Sign convention: rotor speeds and all omega quantities are deviations from
the synchronous reference in rad/s.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field

import numpy as np

_EMPTY = np.empty(0)


class ParameterError(Exception):
    """Raised for physically inconsistent device parameters."""


# ---------------------------------------------------------------------------
# Synchronous machine (two-axis 4th order, or 2nd order with frozen fluxes)
# ---------------------------------------------------------------------------


@dataclass
class Governor:
    """First-order droop governor: Tg pm' = p_ref - Kg*(w_pu - 1) - pm."""

    tg: float = 0.5
    kg: float = 20.0


@dataclass
class AVR:
    """First-order proportional exciter: Ta vf' = Ka*(v_ref - v) + vf0 - vf."""

    ka: float = 20.0
    ta: float = 0.2


@dataclass
class SynMachine:
    """Two-axis synchronous machine behind its stator impedance.

    ``order`` 4 keeps the d/q transient-flux dynamics; ``order`` 2 freezes
    e'_d, e'_q at their initial values.  The stator equations

        X'd i_d + Ra i_q = e'_q - v_q
        Ra  i_d - X'q i_q = e'_d - v_d

    are solved through the constant inverse coefficients ``kv``/``ke``.
    Machine d/q quantities live in a frame rotated by (rotor angle - pi/2)
    from the network frame.
    """

    bus: int
    order: int = 4
    h: float = 5.0
    d: float = 0.0
    ra: float = 0.0
    xd: float = 1.0
    xq: float = 0.8
    xd1: float = 0.3
    xq1: float = 0.4
    td0: float = 6.0
    tq0: float = 0.6
    governor: Governor | None = None
    avr: AVR | None = None
    slack: bool = False
    p_set: float = 0.0
    v_set: float = 1.0
    name: str = ""

    # set by init_state
    p_ref: float = 0.0
    v_ref: float = 0.0
    vf0: float = 0.0
    ed1_const: float = 0.0
    eq1_const: float = 0.0
    omega0: float = 2.0 * np.pi * 60.0

    def __post_init__(self) -> None:
        if self.order not in (2, 4):
            raise ParameterError("machine order must be 2 or 4")
        det = -(self.xd1 * self.xq1 + self.ra**2)
        if det == 0.0:
            raise ParameterError("singular stator matrix: Ra^2 + X'd*X'q = 0")
        # inverse of [[X'd, Ra], [Ra, -X'q]]
        self.k_vdd = self.ra / det
        self.k_vdq = self.xq1 / det
        self.k_edd = -self.ra / det
        self.k_edq = -self.xq1 / det
        self.k_vqd = -self.xd1 / det
        self.k_vqq = self.ra / det
        self.k_eqd = self.xd1 / det
        self.k_eqq = -self.ra / det

    # state layout: [delta, w_pu, e'q, e'd, pm, vf] (order 4)
    #               [delta, w_pu, pm]               (order 2)
    @property
    def nx(self) -> int:
        return 6 if self.order == 4 else 3

    def state_names(self) -> list[str]:
        if self.order == 4:
            return ["delta", "w", "eq1", "ed1", "pm", "vf"]
        return ["delta", "w", "pm"]

    def _fluxes(self, x: np.ndarray) -> tuple[float, float]:
        if self.order == 4:
            return x[2], x[3]
        return self.eq1_const, self.ed1_const

    def machine_frame(self, x: np.ndarray, vbar: complex):
        """Stator-frame voltage components (v_d, v_q) and rotation r with
        vbar_machine = vbar / r."""
        rot = cmath.exp(1j * (x[0] - 0.5 * np.pi))
        vs = vbar / rot
        return vs.real, vs.imag, rot

    def currents(self, x: np.ndarray, vbar: complex) -> tuple[float, float]:
        """Stator d/q currents from the linear stator equations."""
        vds, vqs, _ = self.machine_frame(x, vbar)
        eq1, ed1 = self._fluxes(x)
        ids = self.k_vdd * vds + self.k_vdq * vqs + self.k_edd * ed1 + self.k_edq * eq1
        iqs = self.k_vqd * vds + self.k_vqq * vqs + self.k_eqd * ed1 + self.k_eqq * eq1
        return ids, iqs

    def current(self, x: np.ndarray, vbar: complex) -> complex:
        """Network-frame current injection."""
        ids, iqs = self.currents(x, vbar)
        return complex(ids, iqs) * cmath.exp(1j * (x[0] - 0.5 * np.pi))

    def injection(self, x: np.ndarray, vbar: complex) -> complex:
        return vbar * self.current(x, vbar).conjugate()

    def electrical_torque(self, x: np.ndarray, vbar: complex) -> float:
        ids, iqs = self.currents(x, vbar)
        eq1, ed1 = self._fluxes(x)
        return ed1 * ids + eq1 * iqs + (self.xq1 - self.xd1) * ids * iqs

    def f(self, x: np.ndarray, vbar: complex) -> np.ndarray:
        dw = x[1] - 1.0
        te = self.electrical_torque(x, vbar)
        out = np.empty(self.nx)
        out[0] = self.omega0 * dw
        pm = x[4] if self.order == 4 else x[2]
        out[1] = (pm - te - self.d * dw) / (2.0 * self.h)
        gov = self.governor
        dpm = 0.0 if gov is None else (self.p_ref - gov.kg * dw - pm) / gov.tg
        if self.order == 4:
            ids, iqs = self.currents(x, vbar)
            vf = x[5]
            out[2] = (-x[2] - (self.xd - self.xd1) * ids + vf) / self.td0
            out[3] = (-x[3] + (self.xq - self.xq1) * iqs) / self.tq0
            out[4] = dpm
            a = self.avr
            out[5] = (
                0.0
                if a is None
                else (a.ka * (self.v_ref - abs(vbar)) + self.vf0 - vf) / a.ta
            )
        else:
            out[2] = dpm
        return out

    def init_state(self, vbar: complex, sbar: complex) -> np.ndarray:
        """Back-initialize all states from the power-flow operating point so
        that every state derivative is zero."""
        ibar = np.conj(sbar / vbar)
        emf = vbar + complex(self.ra, self.xq) * ibar
        delta = np.angle(emf)
        rot = np.exp(1j * (delta - 0.5 * np.pi))
        vs, is_ = vbar / rot, ibar / rot
        vds, vqs = vs.real, vs.imag
        ids, iqs = is_.real, is_.imag
        eq1 = vqs + self.ra * iqs + self.xd1 * ids
        ed1 = vds + self.ra * ids - self.xq1 * iqs
        vf = eq1 + (self.xd - self.xd1) * ids
        pm = ed1 * ids + eq1 * iqs + (self.xq1 - self.xd1) * ids * iqs
        self.p_ref = pm
        self.v_ref = abs(vbar)
        self.vf0 = vf
        self.eq1_const = eq1
        self.ed1_const = ed1
        if self.order == 4:
            return np.array([delta, 1.0, eq1, ed1, pm, vf])
        return np.array([delta, 1.0, pm])

    def idot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        """Current-derivative row: di/dt = c_rho*rho + c_omega*omega + c_0.

        The stator current components react to the terminal-voltage rates
        (which carry rho, omega and the rotor speed) and to the flux rates;
        the frame rotation at rotor speed adds j*w_r*i to the network-frame
        derivative.
        """
        vds, vqs, rot = self.machine_frame(x, vbar)
        wr = self.omega0 * (x[1] - 1.0)
        if self.order == 4:
            deq1, ded1 = xdot[2], xdot[3]
        else:
            deq1 = ded1 = 0.0
        ids, iqs = self.currents(x, vbar)
        kvdd, kvdq, kvqd, kvqq = self.k_vdd, self.k_vdq, self.k_vqd, self.k_vqq
        c_rho = complex(kvdd * vds + kvdq * vqs, kvqd * vds + kvqq * vqs)
        c_om = complex(-kvdd * vqs + kvdq * vds, -kvqd * vqs + kvqq * vds)
        c0_d = -(-kvdd * vqs + kvdq * vds) * wr + self.k_edd * ded1 + self.k_edq * deq1
        c0_q = -(-kvqd * vqs + kvqq * vds) * wr + self.k_eqd * ded1 + self.k_eqq * deq1
        c_0 = complex(c0_d, c0_q) + 1j * wr * complex(ids, iqs)
        return rot * c_rho, rot * c_om, rot * c_0

    def sdot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        """Power-derivative row ds/dt = d_rho*rho + d_omega*omega + d_0,
        composed from the current row via ds/dt = s*eta + v*conj(di/dt)."""
        c_rho, c_om, c_0 = self.idot_coeffs(x, xdot, vbar)
        sbar = self.injection(x, vbar)
        return (
            sbar + vbar * c_rho.conjugate(),
            1j * sbar + vbar * c_om.conjugate(),
            vbar * c_0.conjugate(),
        )


# ---------------------------------------------------------------------------
# Static loads
# ---------------------------------------------------------------------------

_LOAD_KINDS = ("power", "current", "impedance")


@dataclass
class StaticLoad:
    """Constant-power, constant-current (fixed magnitude and power factor)
    or constant-admittance load.

    Consumption is anchored at (p0, q0) for the reference voltage ``v_anchor``
    (set at initialization from the power flow), so the three kinds scale as
    (v/v_anchor)**gamma with gamma = 0, 1, 2 respectively.  ``scale`` tracks
    in-service fraction (0 = disconnected).
    """

    bus: int
    p0: float
    q0: float
    kind: str = "power"
    scale: float = 1.0
    v_anchor: float = 1.0
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in _LOAD_KINDS:
            raise ParameterError(f"unknown load kind {self.kind!r}")
        self.gamma = float(_LOAD_KINDS.index(self.kind))

    nx = 0

    def anchor(self, vbar: complex) -> None:
        self.v_anchor = abs(vbar)

    def injection(self, x: np.ndarray, vbar: complex) -> complex:
        v = abs(vbar)
        if v <= 0.0:
            raise FloatingPointError(f"zero voltage magnitude at bus {self.bus + 1}")
        ratio = (v / self.v_anchor) ** self.gamma
        return -self.scale * complex(self.p0, self.q0) * ratio

    def current(self, x: np.ndarray, vbar: complex) -> complex:
        return (self.injection(x, vbar) / vbar).conjugate()

    def f(self, x: np.ndarray, vbar: complex) -> np.ndarray:
        return _EMPTY

    def dinjection_dv(self, vbar: complex) -> complex:
        """d s / d|v| (used by the power-flow Jacobian)."""
        v = abs(vbar)
        return self.gamma * self.injection(_EMPTY, vbar) / v

    def admittance(self, vbar: complex) -> complex:
        """Equivalent shunt admittance (constant-admittance loads only)."""
        if self.kind != "impedance":
            raise ParameterError("admittance only defined for impedance loads")
        sbar = self.injection(_EMPTY, vbar)
        return -np.conj(sbar) / abs(vbar) ** 2

    def idot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        sbar = self.injection(x, vbar)
        ibar = (sbar / vbar).conjugate()
        # power kind: i = conj(s0/v) -> di/dt = -i*conj(eta)
        # impedance:  i = -Y0 v     -> di/dt =  i*eta
        # current:    |i|, phi fixed -> di/dt = j*i*omega
        if self.kind == "power":
            return -ibar, 1j * ibar, 0.0j
        if self.kind == "impedance":
            return ibar, 1j * ibar, 0.0j
        return 0.0j, 1j * ibar, 0.0j

    def sdot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        sbar = self.injection(x, vbar)
        # ds/dt = gamma * s * rho for all three kinds
        return self.gamma * sbar, 0.0j, 0.0j


@dataclass
class VoltDepLoad:
    """Voltage-dependent load p = p0*(v/va)^gp, q = q0*(v/va)^gq (consumed).

    Generalizes the static kinds: gamma 0/1/2 reproduces constant power /
    current / admittance behavior per axis.
    """

    bus: int
    p0: float
    q0: float
    gamma_p: float = 1.0
    gamma_q: float = 2.0
    scale: float = 1.0
    v_anchor: float = 1.0
    name: str = ""

    nx = 0

    def anchor(self, vbar: complex) -> None:
        self.v_anchor = abs(vbar)

    def injection(self, x: np.ndarray, vbar: complex) -> complex:
        v = abs(vbar)
        if v <= 0.0:
            raise FloatingPointError(f"zero voltage magnitude at bus {self.bus + 1}")
        r = v / self.v_anchor
        return -self.scale * complex(
            self.p0 * r**self.gamma_p, self.q0 * r**self.gamma_q
        )

    def current(self, x: np.ndarray, vbar: complex) -> complex:
        return (self.injection(x, vbar) / vbar).conjugate()

    def f(self, x: np.ndarray, vbar: complex) -> np.ndarray:
        return _EMPTY

    def dinjection_dv(self, vbar: complex) -> complex:
        v = abs(vbar)
        s = self.injection(_EMPTY, vbar)
        return complex(self.gamma_p * s.real, self.gamma_q * s.imag) / v

    def sdot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        s = self.injection(x, vbar)
        return complex(self.gamma_p * s.real, self.gamma_q * s.imag), 0.0j, 0.0j

    def idot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        d_rho, _, _ = self.sdot_coeffs(x, xdot, vbar)
        sbar = self.injection(x, vbar)
        ibar = (sbar / vbar).conjugate()
        # di/dt = conj(ds/dt)/conj(v) - i*conj(eta)
        return d_rho.conjugate() / vbar.conjugate() - ibar, 1j * ibar, 0.0j


# ---------------------------------------------------------------------------
# Converter-interfaced generator
# ---------------------------------------------------------------------------


@dataclass
class CIG:
    """Converter-interfaced generator with droop outer loops.

    Control scheme 1: active power follows a frequency droop on the PLL
    estimate, reactive power follows a voltage droop.  Scheme 2 adds a
    frequency-droop term (gain ``kqf``) to the reactive channel, so frequency
    is regulated through both p and q.

    The outer loops command power deviations around the dispatch; current
    orders pass through a first-order converter lag (``tc``) and the device
    interfaces to the grid as a current source, so the network-frame current
    components are states and their derivatives are available directly.
    """

    bus: int
    p_set: float = 0.0
    v_set: float = 1.0
    control: int = 1
    kp: float = 0.053
    tp: float = 0.1
    kq: float = 5.0
    tq: float = 0.1
    kqf: float = 0.0
    tc: float = 0.02
    pll_kp: float = 92.0
    pll_ki: float = 4230.0
    imax: float = 3.0
    name: str = ""

    # set by init_state
    q_disp: float = 0.0
    p_disp: float = 0.0
    v_ref: float = 1.0

    def __post_init__(self) -> None:
        if self.control not in (1, 2):
            raise ParameterError("CIG control scheme must be 1 or 2")

    # state layout: [dp, dq, i_re, i_im, phi_pll, xi_pll]
    nx = 6

    def state_names(self) -> list[str]:
        return ["dp", "dq", "ire", "iim", "phi", "xi"]

    def init_state(self, vbar: complex, sbar: complex) -> np.ndarray:
        self.p_disp = sbar.real
        self.q_disp = sbar.imag
        self.v_ref = abs(vbar)
        ibar = (sbar / vbar).conjugate()
        return np.array([0.0, 0.0, ibar.real, ibar.imag, cmath.phase(vbar), 0.0])

    def _pll_error(self, x: np.ndarray, vbar: complex) -> float:
        v = abs(vbar)
        return (vbar * cmath.exp(-1j * x[4])).imag / v if v > 0 else 0.0

    def omega_pll(self, x: np.ndarray, vbar: complex) -> float:
        return self.pll_kp * self._pll_error(x, vbar) + x[5]

    def f(self, x: np.ndarray, vbar: complex) -> np.ndarray:
        eps = self._pll_error(x, vbar)
        w_hat = self.pll_kp * eps + x[5]
        dp, dq = x[0], x[1]
        ddp = (self.kp * (0.0 - w_hat) - dp) / self.tp
        dv = self.v_ref - abs(vbar)
        if self.control == 1:
            ddq = (self.kq * dv - dq) / self.tq
        else:
            ddq = (self.kq * dv + self.kqf * (0.0 - w_hat) - dq) / self.tq
        s_ord = complex(self.p_disp + dp, self.q_disp + dq)
        i_ord = s_ord.conjugate() / vbar.conjugate()
        mag = abs(i_ord)
        if mag > self.imax:
            i_ord *= self.imax / mag
        return np.array(
            [
                ddp,
                ddq,
                (i_ord.real - x[2]) / self.tc,
                (i_ord.imag - x[3]) / self.tc,
                w_hat,
                self.pll_ki * eps,
            ]
        )

    def current(self, x: np.ndarray, vbar: complex) -> complex:
        return complex(x[2], x[3])

    def injection(self, x: np.ndarray, vbar: complex) -> complex:
        return vbar * np.conj(complex(x[2], x[3]))

    def idot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        # current components are states: their derivative is known outright
        return 0.0j, 0.0j, complex(xdot[2], xdot[3])

    def sdot_coeffs(self, x: np.ndarray, xdot: np.ndarray, vbar: complex):
        sbar = self.injection(x, vbar)
        c0 = complex(xdot[2], xdot[3])
        return sbar, 1j * sbar, vbar * c0.conjugate()


# ---------------------------------------------------------------------------
# SRF-PLL estimator (measurement side, outside the DAE)
# ---------------------------------------------------------------------------


@dataclass
class PLLEstimator:
    """Synchronous-reference-frame PLL tracking one bus voltage.

    A PI loop on the normalized quadrature error sin(theta - phi) gives the
    frequency-deviation estimate; the phase error is bounded by construction,
    so angle jumps saturate the estimator instead of diverging it.  An
    optional washout on ln|v| estimates the magnitude-rate component.
    """

    kp: float = 92.0
    ki: float = 4230.0
    t_washout: float = 0.02

    def run(self, t: np.ndarray, vbar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Track a sampled voltage trajectory; returns (omega_hat, rho_hat)."""
        m = len(t)
        w_hat = np.zeros(m)
        r_hat = np.zeros(m)
        phi = float(np.angle(vbar[0]))
        xi = 0.0
        u = np.log(np.abs(vbar))
        xw = u[0]
        for k in range(m - 1):
            dt = t[k + 1] - t[k]
            # Heun step of [phi' = kp*eps + xi, xi' = ki*eps]
            e1 = self._err(vbar[k], phi)
            f_phi1 = self.kp * e1 + xi
            f_xi1 = self.ki * e1
            e2 = self._err(vbar[k + 1], phi + dt * f_phi1)
            f_phi2 = self.kp * e2 + (xi + dt * f_xi1)
            f_xi2 = self.ki * e2
            phi += 0.5 * dt * (f_phi1 + f_phi2)
            xi += 0.5 * dt * (f_xi1 + f_xi2)
            w_hat[k + 1] = self.kp * self._err(vbar[k + 1], phi) + xi
            # washout on u: rho = (u - xw)/Tw with xw' = rho
            g1 = (u[k] - xw) / self.t_washout
            g2 = (u[k + 1] - (xw + dt * g1)) / self.t_washout
            xw += 0.5 * dt * (g1 + g2)
            r_hat[k + 1] = (u[k + 1] - xw) / self.t_washout
        return w_hat, r_hat

    @staticmethod
    def _err(vk: complex, phi: float) -> float:
        v = abs(vk)
        return float(np.imag(vk * np.exp(-1j * phi))) / v if v > 0.0 else 0.0

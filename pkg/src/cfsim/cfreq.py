"""Per-step computation of the bus complex frequencies eta = rho + j*omega.

At every accepted integration step the network side ties the complex power
injections to the complex frequencies through the injection matrix S:

    ds/dt - s ∘ eta = S conj(eta)          (power-balance form)
    v ∘ conj(di/dt) = S conj(eta)          (compact device form)
    di/dt           = Y diag(v) eta        (current form)

The device side supplies ds/dt (or di/dt) as linear functions of the local
(rho, omega) plus terms in the state derivatives, so each form reduces to a
real 2n x 2n linear system A chi = b with chi = [rho; omega].  The three
assemblies are algebraically equivalent and are all kept as cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .devices import CIG, StaticLoad, SynMachine, VoltDepLoad
from .network import build_approx_matrices, build_injection_matrix


@dataclass
class DeviceRows:
    """Per-bus boundary-condition coefficients collected from all devices.

    ``d_*`` give ds/dt = d_rho*rho_h + d_omega*omega_h + d_0 per bus,
    ``c_*`` the same for di/dt.  Buses without devices carry zero injection
    (constant zero power), i.e. all-zero rows.
    """

    d_rho: np.ndarray
    d_omega: np.ndarray
    d_0: np.ndarray
    c_rho: np.ndarray
    c_omega: np.ndarray
    c_0: np.ndarray


def collect_device_rows(devices, slices, x, xdot, vbar) -> DeviceRows:
    n = len(vbar)
    rows = DeviceRows(*(np.zeros(n, dtype=complex) for _ in range(6)))
    vb_list = vbar.tolist()
    for dev, sl in zip(devices, slices):
        xs, dxs = x[sl], xdot[sl]
        vb = vb_list[dev.bus]
        d_rho, d_om, d_0 = dev.sdot_coeffs(xs, dxs, vb)
        c_rho, c_om, c_0 = dev.idot_coeffs(xs, dxs, vb)
        h = dev.bus
        rows.d_rho[h] += d_rho
        rows.d_omega[h] += d_om
        rows.d_0[h] += d_0
        rows.c_rho[h] += c_rho
        rows.c_omega[h] += c_om
        rows.c_0[h] += c_0
    return rows


def _split(chi: np.ndarray, n: int):
    return chi[:n], chi[n:]


def _solve_refined(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct solve plus one iterative-refinement pass (the three assembly
    forms are compared to 1e-8, so residuals are polished below that)."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= diag.max() * 1e-14:
        raise np.linalg.LinAlgError("singular complex-frequency system")
    chi = scipy.linalg.lu_solve(lu, b, check_finite=False)
    chi += scipy.linalg.lu_solve(lu, b - A @ chi, check_finite=False)
    if not np.all(np.isfinite(chi)):
        raise np.linalg.LinAlgError("singular complex-frequency system")
    return chi


def solve_cf_power_form(S: np.ndarray, rows: DeviceRows):
    """Assemble and solve the power-balance form.

    Block layout (H = Re S, K = Im S, p/q = row sums of S):

        [H + diag(p) - P_rho   K - diag(q) - P_omega] [rho  ]   [P_x xdot]
        [K + diag(q) - Q_rho  -(H - diag(p) + Q_omega)] [omega] = [Q_x xdot]

    where the device Jacobian diagonals come from the collected rows.
    Returns (rho, omega).  Raises numpy.linalg.LinAlgError if singular.
    """
    n = S.shape[0]
    sbar = S.sum(axis=1)
    H, K = S.real, S.imag
    p, q = sbar.real, sbar.imag
    A = np.empty((2 * n, 2 * n))
    A[:n, :n] = H + np.diag(p - rows.d_rho.real)
    A[:n, n:] = K - np.diag(q + rows.d_omega.real)
    A[n:, :n] = K + np.diag(q - rows.d_rho.imag)
    A[n:, n:] = -H + np.diag(p - rows.d_omega.imag)
    b = np.concatenate([rows.d_0.real, rows.d_0.imag])
    return _split(_solve_refined(A, b), n)


def solve_cf_compact_form(S: np.ndarray, rows: DeviceRows, vbar: np.ndarray):
    """Solve the compact device form v ∘ conj(di/dt) = S conj(eta).

    The device side enters through v_h * conj(c-row), which folds the
    injection derivative directly without the ds/dt composition.
    """
    n = S.shape[0]
    H, K = S.real, S.imag
    a = vbar * rows.c_rho.conj()
    bw = vbar * rows.c_omega.conj()
    b0 = vbar * rows.c_0.conj()
    A = np.empty((2 * n, 2 * n))
    A[:n, :n] = H - np.diag(a.real)
    A[:n, n:] = K - np.diag(bw.real)
    A[n:, :n] = K - np.diag(a.imag)
    A[n:, n:] = -H - np.diag(bw.imag)
    b = np.concatenate([b0.real, b0.imag])
    return _split(_solve_refined(A, b), n)


def solve_cf_current_form(Y: np.ndarray, vbar: np.ndarray, rows: DeviceRows):
    """Solve the current form di/dt = I eta with I = Y diag(v)."""
    n = len(vbar)
    Imat = Y * vbar[None, :]
    IR, II = Imat.real, Imat.imag
    A = np.empty((2 * n, 2 * n))
    A[:n, :n] = IR - np.diag(rows.c_rho.real)
    A[:n, n:] = -II - np.diag(rows.c_omega.real)
    A[n:, :n] = II - np.diag(rows.c_rho.imag)
    A[n:, n:] = IR - np.diag(rows.c_omega.imag)
    b = np.concatenate([rows.c_0.real, rows.c_0.imag])
    return _split(_solve_refined(A, b), n)


def sdot_residual(S: np.ndarray, rows: DeviceRows, rho: np.ndarray, omega: np.ndarray):
    """Complex per-bus residual of ds/dt - s∘eta - S conj(eta) at a solved
    complex frequency (device side evaluated at the same eta)."""
    eta = rho + 1j * omega
    sbar = S.sum(axis=1)
    sdot_dev = rows.d_rho * rho + rows.d_omega * omega + rows.d_0
    return sdot_dev - sbar * eta - S @ eta.conj()


def split_sdot_components(S: np.ndarray, rho: np.ndarray, omega: np.ndarray):
    """Angle-driven and magnitude-driven power-derivative components.

    ds'_h = j sum_k s_hk (w_h - w_k)   (differences of omega)
    ds''_h =  sum_k s_hk (r_h + r_k)   (sums of rho)
    """
    sbar = S.sum(axis=1)
    sdot1 = 1j * (sbar * omega - S @ omega)
    sdot2 = sbar * rho + S @ rho
    return sdot1, sdot2


def approx_form_residuals(
    S: np.ndarray,
    Y: np.ndarray,
    approx,
    rows: DeviceRows,
    rho: np.ndarray,
    omega: np.ndarray,
    include_splits: bool = True,
) -> dict[str, float]:
    """Inf-norm residuals of the approximate network kernels vs the exact one.

    ``flat``   replaces S by conj(Y) (flat-profile approximation),
    ``bonly``  additionally drops conductances (S -> -jB),
    ``split1/split2`` test the decoupled Laplacian forms against the exact
    angle/magnitude components.
    """
    eta = rho + 1j * omega
    sbar = S.sum(axis=1)
    sdot_dev = rows.d_rho * rho + rows.d_omega * omega + rows.d_0
    lhs = sdot_dev - sbar * eta
    out = {
        "exact": float(np.max(np.abs(lhs - S @ eta.conj()))),
        "flat": float(np.max(np.abs(lhs - Y.conj() @ eta.conj()))),
        "bonly": float(np.max(np.abs(lhs + 1j * Y.imag @ eta.conj()))),
    }
    if include_splits:
        sdot1, sdot2 = split_sdot_components(S, rho, omega)
        Yp = approx.Gp + 1j * approx.Bp
        Ypp = approx.Gpp + 1j * approx.Bpp
        out["split1"] = float(np.max(np.abs(sdot1 - 1j * Yp.conj() @ omega)))
        out["split2"] = float(np.max(np.abs(sdot2 - Ypp @ rho)))
    return out


def special_case_residuals(S, Y, vbar, rho, omega, devices, slices, x):
    """Analytic identity residual for each static-device bus.

    Constant power:      -s_h0 eta_h = sum_k s_hk conj(eta_k)
    Constant admittance: -conj(Y_tot) v^2 conj(eta_h) = sum_{k!=h} s_hk conj(eta_k)
    Constant current:     sum_k i_hk rho_k = 0  (magnitude row)
    VDL:                  (gp*p + j gq*q) rho_h = sum_k s_hk (eta_h + conj(eta_k))

    Returns {bus: (kind, residual or None)}; buses with dynamic devices are
    marked with residual None (no static identity applies).
    """
    eta = rho + 1j * omega
    Se = S @ eta.conj()
    report: dict[int, tuple[str, complex | None]] = {}
    for dev, sl in zip(devices, slices):
        h = dev.bus
        if isinstance(dev, StaticLoad):
            sbar = dev.injection(x[sl], vbar[h])
            if dev.kind == "power":
                report[h] = ("power", sbar * eta[h] + Se[h])
            elif dev.kind == "impedance":
                y_tot = dev.admittance(vbar[h]) + Y[h, h]
                off = Se[h] - S[h, h] * np.conj(eta[h])
                report[h] = (
                    "impedance",
                    np.conj(y_tot) * abs(vbar[h]) ** 2 * np.conj(eta[h]) + off,
                )
            else:
                irow = Y[h, :] * vbar
                report[h] = ("current", complex(irow @ rho))
        elif isinstance(dev, VoltDepLoad):
            sbar = dev.injection(x[sl], vbar[h])
            lhs = complex(dev.gamma_p * sbar.real, dev.gamma_q * sbar.imag) * rho[h]
            report[h] = ("vdl", lhs - (S[h, :] @ (eta[h] + eta.conj())))
        else:
            report[h] = (type(dev).__name__.lower(), None)
    return report


def pure_impedance_buses(devices) -> list[int]:
    """Buses whose entire connected (in-service) load is constant-admittance.

    The admittance-load passivity identity applies only there; a bus gaining
    e.g. a constant-power device mid-scenario drops out while that device is
    in service.
    """
    by_bus: dict[int, list] = {}
    for dev in devices:
        by_bus.setdefault(dev.bus, []).append(dev)
    out = []
    for h, devs in by_bus.items():
        has_imp = False
        ok = True
        for d in devs:
            if isinstance(d, StaticLoad) and d.kind == "impedance":
                has_imp = True
            elif isinstance(d, (StaticLoad, VoltDepLoad)) and d.scale == 0.0:
                continue
            else:
                ok = False
                break
        if has_imp and ok:
            out.append(h)
    return sorted(out)


def current_complex_frequency(ibar_t: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Complex frequency xi = di/dt / i of a sampled current injection,
    via centered differences of ln|i| + j*unwrapped angle."""
    mag = np.abs(ibar_t)
    if np.any(mag <= 0.0):
        raise ValueError("current magnitude must stay positive")
    zeta = np.log(mag) + 1j * np.unwrap(np.angle(ibar_t))
    xi = np.empty_like(zeta)
    xi[1:-1] = (zeta[2:] - zeta[:-2]) / (t[2:] - t[:-2])
    xi[0] = (zeta[1] - zeta[0]) / (t[1] - t[0])
    xi[-1] = (zeta[-1] - zeta[-2]) / (t[-1] - t[-2])
    return xi


# ---------------------------------------------------------------------------
# Frequency divider
# ---------------------------------------------------------------------------


class FrequencyDivider:
    """Bus-frequency approximation from machine rotor speeds.

    Builds the susceptance Laplacian of the network augmented with one
    internal node per synchronous machine (connected through 1/X'd) and
    solves the boundary-value problem with rotor speeds imposed at the
    internal nodes.  With every machine at the same speed the whole network
    sits at that speed.
    """

    def __init__(self, Y: np.ndarray, machines: list[SynMachine]):
        n = Y.shape[0]
        m = len(machines)
        if m == 0:
            raise ValueError("frequency divider needs at least one machine")
        w = np.zeros((n + m, n + m))
        w[:n, :n] = Y.imag - np.diag(np.diag(Y.imag))
        for j, mach in enumerate(machines):
            w[mach.bus, n + j] = w[n + j, mach.bus] = 1.0 / mach.xd1
        lap = -w + np.diag(w.sum(axis=1))
        self._solve = np.linalg.solve
        self._Lbb = lap[:n, :n]
        self._Lbg = lap[:n, n:]

    def estimate(self, omega_r: np.ndarray) -> np.ndarray:
        """Per-bus frequency deviation (rad/s) from machine speeds (rad/s)."""
        return self._solve(self._Lbb, -self._Lbg @ omega_r)


# ---------------------------------------------------------------------------
# Per-step observer
# ---------------------------------------------------------------------------


@dataclass
class CFOptions:
    cross_forms: bool = True
    approx_report: bool = True
    singular_policy: str = "carry"  # flag and reuse previous sample


class ComplexFrequencyObserver:
    """Trajectory observer: solves the complex-frequency system at every
    accepted step and records cross-form / identity diagnostics.

    Flags: 0 clean, 1 event instant (right limit stored), 2 singular system
    (previous sample carried forward).
    """

    def __init__(self, options: CFOptions | None = None):
        self.opt = options or CFOptions()

    def start(self, sim, m: int) -> None:
        n = sim.n
        self.machines = [d for d in sim.devices if isinstance(d, SynMachine)]
        self.cigs = [d for d in sim.devices if isinstance(d, CIG)]
        self._mach_sl = [
            sl
            for d, sl in zip(sim.devices, sim._slices)
            if isinstance(d, SynMachine)
        ]
        self._cig_sl = [
            sl for d, sl in zip(sim.devices, sim._slices) if isinstance(d, CIG)
        ]
        self.rho = np.zeros((m, n))
        self.omega = np.zeros((m, n))
        self.omega_fdf = np.zeros((m, n))
        self.coi = np.zeros(m)
        self.flag = np.zeros(m, dtype=int)
        self.resid_sdot = np.zeros(m)
        self.xform = np.zeros(m)
        self.yconst = np.zeros(m)
        self.approx = {k: np.zeros(m) for k in ("exact", "flat", "bonly")}
        self.topology_changed(sim)

    def topology_changed(self, sim) -> None:
        self._fdf = FrequencyDivider(sim.Y, self.machines) if self.machines else None
        self._approx_mats = build_approx_matrices(sim.Y)
        self._imp_buses = [
            (
                h,
                [
                    d
                    for d in sim.devices
                    if d.bus == h and isinstance(d, StaticLoad) and d.kind == "impedance"
                ],
            )
            for h in pure_impedance_buses(sim.devices)
        ]

    def machine_speeds(self, sim) -> np.ndarray:
        return np.array(
            [sim.grid.omega0 * (sim.x[sl][1] - 1.0) for sl in self._mach_sl]
        )

    def step(self, sim, k: int, event: bool) -> None:
        vbar = sim.v * np.exp(1j * sim.theta)
        S = build_injection_matrix(sim.Y, vbar)
        rows = collect_device_rows(sim.devices, sim._slices, sim.x, sim.xdot, vbar)
        flag = 1 if event else 0
        try:
            rho, omega = solve_cf_power_form(S, rows)
        except np.linalg.LinAlgError:
            if k == 0 or self.opt.singular_policy != "carry":
                raise
            rho, omega = self.rho[k - 1].copy(), self.omega[k - 1].copy()
            flag = 2
        self.rho[k] = rho
        self.omega[k] = omega
        self.flag[k] = flag

        if flag != 2:
            self.resid_sdot[k] = np.max(np.abs(sdot_residual(S, rows, rho, omega)))
            if self.opt.cross_forms:
                r2, w2 = solve_cf_compact_form(S, rows, vbar)
                r3, w3 = solve_cf_current_form(sim.Y, vbar, rows)
                eta = rho + 1j * omega
                self.xform[k] = max(
                    np.max(np.abs(eta - (r2 + 1j * w2))),
                    np.max(np.abs(eta - (r3 + 1j * w3))),
                )
            if self.opt.approx_report:
                rep = approx_form_residuals(
                    S, sim.Y, self._approx_mats, rows, rho, omega,
                    include_splits=False,
                )
                for key in self.approx:
                    self.approx[key][k] = rep[key]
            self.yconst[k] = self._impedance_identity(sim, S, vbar, rho, omega)

        if self.machines:
            speeds = self.machine_speeds(sim)
            self.omega_fdf[k] = self._fdf.estimate(speeds)
            h2 = np.array([2.0 * mch.h for mch in self.machines])
            self.coi[k] = float(h2 @ speeds / h2.sum())

    def _impedance_identity(self, sim, S, vbar, rho, omega) -> float:
        eta = rho + 1j * omega
        Se = S @ eta.conj()
        worst = 0.0
        for h, imps in self._imp_buses:
            y_load = sum(d.admittance(vbar[h]) for d in imps)
            y_tot = y_load + sim.Y[h, h]
            off = Se[h] - S[h, h] * np.conj(eta[h])
            r = np.conj(y_tot) * abs(vbar[h]) ** 2 * np.conj(eta[h]) + off
            worst = max(worst, abs(r))
        return worst

    def finalize(self, traj) -> None:
        """Attach collected columns to a finished trajectory."""
        traj.extra["rho"] = self.rho
        traj.extra["omega"] = self.omega
        traj.extra["omega_fdf"] = self.omega_fdf
        traj.extra["coi_omega"] = self.coi
        traj.extra["cf_flag"] = self.flag
        traj.extra["resid_sdot"] = self.resid_sdot
        traj.extra["xform_diff"] = self.xform
        traj.extra["yconst_resid"] = self.yconst
        for key, arr in self.approx.items():
            traj.extra[f"approx_{key}"] = arr

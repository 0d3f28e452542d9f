"""Measurement-side applications: voltage-dependent-load exponent estimation
from bus trajectories, and the finite-difference complex-frequency oracle.

Both work on uniformly sampled complex-log trajectories zeta = ln v + j*theta
(angles unwrapped).  Finite differences over a window of length dt replace
the instantaneous complex frequencies, which avoids the rho -> 0 degeneracy
of the instantaneous estimator in near-steady conditions; windows with too
little magnitude variation are rejected outright instead of returning noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientExcitation(Exception):
    """Voltage-magnitude variation below the excitation floor."""


class InputError(Exception):
    """Malformed trajectory input (non-uniform sampling, too short, ...)."""


@dataclass
class VDLEstimate:
    t_start: float
    gamma_p: float
    gamma_q: float
    method: str


def window_vdl_estimate(
    dzeta: np.ndarray,
    s_row: np.ndarray,
    bus: int,
    p_h: float,
    q_h: float,
    du_floor: float = 1e-6,
) -> tuple[float, float]:
    """Exponent estimate from one window.

    ``dzeta`` holds the complex-log increments of all buses over the window,
    ``s_row`` the pairwise-power row of the load bus (or its -jB surrogate),
    and (p_h, q_h) the load-bus injection.  The estimate is

        gamma_p = Re{ sum_k s_hk (dz_h + conj(dz_k)) } / (p_h * du_h)

    and its imaginary-part counterpart for gamma_q.
    """
    du = dzeta[bus].real
    if abs(du) < du_floor:
        raise InsufficientExcitation(f"|du| = {abs(du):.2e} below floor {du_floor:g}")
    if p_h == 0.0 or q_h == 0.0:
        raise InsufficientExcitation("zero active or reactive injection at load bus")
    acc = s_row @ (dzeta[bus] + dzeta.conj())
    return float(acc.real / (p_h * du)), float(acc.imag / (q_h * du))


def _windows(t, vbar, Y, bus, window_s, event_flag, du_floor, method):
    t = np.asarray(t, dtype=float)
    m = len(t)
    if m < 3:
        raise InputError("need at least 3 samples")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(dt[0]), 1.0):
        raise InputError("non-uniform sampling")
    span = max(2, int(round(window_s / dt[0])))
    flags = (
        np.zeros(m, dtype=bool)
        if event_flag is None
        else np.asarray(event_flag) != 0
    )
    zeta = np.log(np.abs(vbar)) + 1j * np.asarray(
        [np.unwrap(np.angle(vbar[:, k])) for k in range(vbar.shape[1])]
    ).T

    out: list[VDLEstimate] = []
    for k0 in range(0, m - span, span):
        k1 = k0 + span
        if flags[k0 : k1 + 1].any():
            continue
        mid = (k0 + k1) // 2
        vb = vbar[mid]
        s_row = vb[bus] * Y[bus, :].conj() * vb.conj()
        sbar_h = s_row.sum()
        if method == "approx":
            s_row = -1j * Y.imag[bus, :]
        dz = zeta[k1] - zeta[k0]
        try:
            gp, gq = window_vdl_estimate(
                dz, s_row, bus, sbar_h.real, sbar_h.imag, du_floor
            )
        except InsufficientExcitation:
            continue
        out.append(VDLEstimate(float(t[k0]), gp, gq, method))
    return out


def estimate_vdl_exponents(
    t: np.ndarray,
    vbar: np.ndarray,
    Y: np.ndarray,
    bus: int,
    window_s: float = 0.1,
    event_flag: np.ndarray | None = None,
    du_floor: float = 1e-6,
) -> list[VDLEstimate]:
    """Per-window VDL exponent estimates using the exact pairwise-power row.

    ``vbar`` is the (m, n) sampled voltage trajectory; windows overlapping
    event-flagged samples or lacking excitation are skipped.
    """
    return _windows(t, vbar, Y, bus, window_s, event_flag, du_floor, "exact")


def estimate_vdl_exponents_approx(
    t: np.ndarray,
    vbar: np.ndarray,
    Y: np.ndarray,
    bus: int,
    window_s: float = 0.1,
    event_flag: np.ndarray | None = None,
    du_floor: float = 1e-6,
) -> list[VDLEstimate]:
    """Baseline estimator with the pairwise powers replaced by -jB entries."""
    return _windows(t, vbar, Y, bus, window_s, event_flag, du_floor, "approx")


def median_exponents(estimates: list[VDLEstimate]) -> tuple[float, float]:
    """Median aggregate over the per-window estimates."""
    if not estimates:
        raise InsufficientExcitation("no usable estimation window")
    gp = float(np.median([e.gamma_p for e in estimates]))
    gq = float(np.median([e.gamma_q for e in estimates]))
    return gp, gq


def eta_finite_difference(
    t: np.ndarray,
    zeta: np.ndarray,
    event_flag: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference complex frequency from a sampled complex log.

    Centered differences inside, one-sided at the ends.  Returns
    (eta_hat, valid) where ``valid`` marks samples whose stencil does not
    touch a discontinuity.
    """
    t = np.asarray(t, dtype=float)
    zeta = np.asarray(zeta)
    m = len(t)
    if m < 3:
        raise InputError("need at least 3 samples")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(dt[0]), 1.0):
        raise InputError("non-uniform sampling")
    eta = np.empty_like(zeta, dtype=complex)
    eta[1:-1] = (zeta[2:] - zeta[:-2]) / (2.0 * dt[0])
    eta[0] = (zeta[1] - zeta[0]) / dt[0]
    eta[-1] = (zeta[-1] - zeta[-2]) / dt[0]
    valid = np.ones(m, dtype=bool)
    valid[0] = valid[-1] = False
    if event_flag is not None:
        for k in np.flatnonzero(np.asarray(event_flag)):
            lo = max(0, k - 1)
            valid[lo : k + 2] = False
    return eta, valid

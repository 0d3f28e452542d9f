"""Balanced three-phase signal utilities: abc <-> dq0 and synthesis.

The power-invariant transform matrix

    P(eps) = sqrt(2/3) [[cos eps, cos eps', cos eps''],
                        [sin eps, sin eps', sin eps''],
                        [1/sqrt2, 1/sqrt2,  1/sqrt2 ]]

with eps' = eps - 2pi/3 and eps'' = eps + 2pi/3 is orthogonal, so the
round trip abc -> dq0 -> abc is an identity.  ``eps`` is the angle between
phase a and the q axis and advances at the reference angular frequency.
"""

from __future__ import annotations

import numpy as np

_SQ23 = np.sqrt(2.0 / 3.0)
_ISQ2 = 1.0 / np.sqrt(2.0)


def park_matrix(eps: float) -> np.ndarray:
    """3x3 orthogonal dq0 transform matrix at rotation angle ``eps``."""
    e1, e2, e3 = eps, eps - 2.0 * np.pi / 3.0, eps + 2.0 * np.pi / 3.0
    return _SQ23 * np.array(
        [
            [np.cos(e1), np.cos(e2), np.cos(e3)],
            [np.sin(e1), np.sin(e2), np.sin(e3)],
            [_ISQ2, _ISQ2, _ISQ2],
        ]
    )


def abc_to_dq0(abc: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Transform (N, 3) abc samples using per-sample rotation angles (N,)."""
    abc = np.asarray(abc, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if abc.ndim != 2 or abc.shape[1] != 3 or eps.shape != (abc.shape[0],):
        raise ValueError("abc must be (N, 3) and eps must be (N,)")
    c1, c2, c3 = np.cos(eps), np.cos(eps - 2 * np.pi / 3), np.cos(eps + 2 * np.pi / 3)
    s1, s2, s3 = np.sin(eps), np.sin(eps - 2 * np.pi / 3), np.sin(eps + 2 * np.pi / 3)
    d = _SQ23 * (c1 * abc[:, 0] + c2 * abc[:, 1] + c3 * abc[:, 2])
    q = _SQ23 * (s1 * abc[:, 0] + s2 * abc[:, 1] + s3 * abc[:, 2])
    o = _SQ23 * _ISQ2 * abc.sum(axis=1)
    return np.column_stack([d, q, o])


def dq0_to_abc(dq0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Inverse transform: (N, 3) dq0 samples back to abc."""
    dq0 = np.asarray(dq0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if dq0.ndim != 2 or dq0.shape[1] != 3 or eps.shape != (dq0.shape[0],):
        raise ValueError("dq0 must be (N, 3) and eps must be (N,)")
    out = np.empty_like(dq0)
    angles = (eps, eps - 2 * np.pi / 3, eps + 2 * np.pi / 3)
    for col, ang in enumerate(angles):
        out[:, col] = _SQ23 * (
            np.cos(ang) * dq0[:, 0] + np.sin(ang) * dq0[:, 1] + _ISQ2 * dq0[:, 2]
        )
    return out


def abc_synthesize(
    u: np.ndarray, theta: np.ndarray, t: np.ndarray, f_hz: float, eps0: float = 0.0
) -> np.ndarray:
    """Synthesize balanced abc samples from a complex-log trajectory.

    The Park vector exp(u + j theta) rides on a frame rotating at the nominal
    angular frequency; the abc waveforms are its inverse transform with zero
    o-axis component.
    """
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    vbar = np.exp(u + 1j * theta)
    dq0 = np.column_stack([vbar.real, vbar.imag, np.zeros_like(u)])
    eps = eps0 + 2.0 * np.pi * f_hz * t
    return dq0_to_abc(dq0, eps)

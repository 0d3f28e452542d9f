"""Static network model: topology, admittance matrix and derived matrices.

All quantities are per unit on the system MVA base.  The admittance matrix
``Y = G + jB`` is assembled from standard pi-model branches (series r + jx,
total charging b split half per end, off-nominal tap on the from side).

The injection matrix ``S`` holds the pairwise complex-power terms

    s_hk = v_h * conj(Y_hk) * conj(v_k)

whose row sums reproduce the bus injections ``s_h = v_h * conj((Y v)_h)``.
Its real/imaginary parts H and K are the network-side kernel of the
complex-frequency linear system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ModelError(Exception):
    """Raised for inconsistent or unusable network models."""


@dataclass
class Bus:
    """Network bus. ``index`` is 0-based and dense; ``v0``/``theta0`` are
    power-flow initial condition hints."""

    index: int
    name: str = ""
    kv: float = 1.0
    v0: float = 1.0
    theta0: float = 0.0


@dataclass
class Branch:
    """Pi-model branch between two buses (0-based endpoints).

    Out-of-service branches contribute nothing to the admittance matrix.
    ``tap`` is an off-nominal magnitude on the from side; phase-shifting
    transformers are not modeled.
    """

    from_bus: int
    to_bus: int
    r: float = 0.0
    x: float = 0.0
    b: float = 0.0
    tap: float = 1.0
    status: bool = True

    def series_admittance(self) -> complex:
        if self.r == 0.0 and self.x == 0.0:
            raise ModelError(
                f"branch {self.from_bus + 1}-{self.to_bus + 1} has zero impedance"
            )
        return 1.0 / complex(self.r, self.x)


@dataclass
class Grid:
    """Buses, branches and per-unit bases of one network.

    ``fault_shunts`` maps bus index to a temporary shunt admittance (used for
    scripted bus faults); it participates in the admittance matrix diagonal.
    """

    buses: list[Bus]
    branches: list[Branch]
    base_mva: float = 100.0
    f_hz: float = 60.0
    fault_shunts: dict[int, complex] = field(default_factory=dict)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def omega0(self) -> float:
        return 2.0 * np.pi * self.f_hz

    def validate(self) -> None:
        n = self.n_bus
        if n < 1:
            raise ModelError("grid has no buses")
        if self.f_hz <= 0.0:
            raise ModelError("nominal frequency must be positive")
        seen = {b.index for b in self.buses}
        if seen != set(range(n)):
            raise ModelError("bus indices must be dense in 0..n-1")
        for br in self.branches:
            if br.from_bus not in seen or br.to_bus not in seen:
                raise ModelError(
                    f"branch {br.from_bus + 1}-{br.to_bus + 1} references unknown bus"
                )

    def branch(self, from_bus: int, to_bus: int) -> Branch:
        for br in self.branches:
            if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
                return br
        raise ModelError(f"no branch {from_bus + 1}-{to_bus + 1}")


def build_admittance(grid: Grid) -> np.ndarray:
    """Assemble the n x n complex bus admittance matrix.

    Raises ModelError for an empty network or one with isolated buses
    (which would make the network equations singular).
    """
    grid.validate()
    n = grid.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in grid.branches:
        if not br.status:
            continue
        ys = br.series_admittance()
        ysh = 0.5j * br.b
        f, t, m = br.from_bus, br.to_bus, br.tap
        Y[f, f] += (ys + ysh) / m**2
        Y[t, t] += ys + ysh
        Y[f, t] += -ys / m
        Y[t, f] += -ys / m
    for bus, ysh in grid.fault_shunts.items():
        Y[bus, bus] += ysh
    if n > 1:
        connected = np.abs(Y - np.diag(np.diag(Y))).sum(axis=1) > 0.0
        if not connected.all():
            dead = np.flatnonzero(~connected) + 1
            raise ModelError(f"isolated bus(es): {dead.tolist()}")
    return Y


def build_injection_matrix(Y: np.ndarray, vbar: np.ndarray) -> np.ndarray:
    """Pairwise complex-power matrix S with s_hk = v_h conj(Y_hk) conj(v_k).

    Row sums equal the bus injections v ∘ conj(Y v) to machine precision.
    """
    if not np.all(np.isfinite(vbar)):
        raise FloatingPointError("non-finite bus voltage")
    if np.any(np.abs(vbar) <= 0.0):
        raise FloatingPointError("zero-magnitude bus voltage")
    return vbar[:, None] * Y.conj() * vbar.conj()[None, :]


def bus_injections(Y: np.ndarray, vbar: np.ndarray) -> np.ndarray:
    """Complex power injected into the network at each bus: v ∘ conj(Y v)."""
    return vbar * (Y @ vbar).conj()


@dataclass
class ApproxMatrices:
    """Real matrices B', B'', G', G'' used by the decoupled frequency/voltage
    approximations (B' is the susceptance Laplacian behind the frequency
    divider formula)."""

    Bp: np.ndarray
    Bpp: np.ndarray
    Gp: np.ndarray
    Gpp: np.ndarray


def build_approx_matrices(Y: np.ndarray) -> ApproxMatrices:
    """Derive B', B'', G', G'' from the admittance matrix.

    Off-diagonal entries are the negated susceptance/conductance entries;
    B'/G' diagonals are the off-diagonal row sums (Laplacian structure, zero
    row sums), while B''/G'' diagonals are -2 times the Y diagonal.
    """
    G, B = Y.real, Y.imag
    off_b = B - np.diag(np.diag(B))
    off_g = G - np.diag(np.diag(G))
    Bp = -off_b + np.diag(off_b.sum(axis=1))
    Gp = -off_g + np.diag(off_g.sum(axis=1))
    Bpp = -off_b + np.diag(-2.0 * np.diag(B))
    Gpp = -off_g + np.diag(-2.0 * np.diag(G))
    return ApproxMatrices(Bp=Bp, Bpp=Bpp, Gp=Gp, Gpp=Gpp)


def branch_flows(grid: Grid, Y_unused: np.ndarray | None, vbar: np.ndarray):
    """Per-branch complex power entering from each end: (s_from, s_to).

    ``s_from + s_to`` is the branch loss (series loss minus charging).
    Out-of-service branches report zero flow.
    """
    sf = np.zeros(len(grid.branches), dtype=complex)
    st = np.zeros(len(grid.branches), dtype=complex)
    for i, br in enumerate(grid.branches):
        if not br.status:
            continue
        ys = br.series_admittance()
        ysh = 0.5j * br.b
        m = br.tap
        vf, vt = vbar[br.from_bus], vbar[br.to_bus]
        i_f = (ys + ysh) / m**2 * vf - ys / m * vt
        i_t = -ys / m * vf + (ys + ysh) * vt
        sf[i] = vf * np.conj(i_f)
        st[i] = vt * np.conj(i_t)
    return sf, st

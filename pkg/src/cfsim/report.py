"""Deterministic run outputs: trajectory CSV, summary JSON, estimate CSV and
matplotlib figures rendered to files alongside the delimited output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runner import RunResult

_FMT = "%.15g"


def _fmt(x: float) -> str:
    return _FMT % x


def write_trajectory_csv(path: Path, result: RunResult) -> None:
    """One row per accepted step; `<bus>.<quantity>` column naming.

    Bus angles are unwrapped; all omega/rho quantities are deviations in
    1/s relative to the synchronous reference.
    """
    traj, obs = result.traj, result.observer
    cols: list[tuple[str, np.ndarray]] = [
        ("time", traj.t),
        ("event_flag", traj.event_flag),
        ("cf_flag", obs.flag),
    ]
    for h in result.record:
        b = f"bus{h + 1}"
        cols += [
            (f"{b}.v", traj.v[:, h]),
            (f"{b}.theta", traj.theta[:, h]),
            (f"{b}.rho", obs.rho[:, h]),
            (f"{b}.omega", obs.omega[:, h]),
            (f"{b}.omega_pll", result.pll_omega[h]),
            (f"{b}.rho_pll", result.pll_rho[h]),
            (f"{b}.omega_fdf", obs.omega_fdf[:, h]),
        ]
    for j, name in enumerate(traj.state_names):
        cols.append((name, traj.x[:, j]))
    cols += [
        ("coi.omega", obs.coi),
        ("resid_sdot", obs.resid_sdot),
        ("xform_diff", obs.xform),
        ("yconst_resid", obs.yconst),
    ]
    for key, arr in obs.approx.items():
        cols.append((f"approx_{key}", arr))

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(name for name, _ in cols) + "\n")
        data = [arr for _, arr in cols]
        for k in range(len(traj.t)):
            fh.write(",".join(_fmt(float(col[k])) for col in data) + "\n")


def write_summary(path: Path, result: RunResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_estimates_csv(path: Path, result: RunResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("t_start,gamma_p,gamma_q,method\n")
        for est in result.estimates + result.estimates_approx:
            fh.write(
                f"{_fmt(est.t_start)},{_fmt(est.gamma_p)},"
                f"{_fmt(est.gamma_q)},{est.method}\n"
            )


def render_figures(outdir: Path, result: RunResult) -> list[Path]:
    """Render the standard comparison figures as PNG files."""
    outdir.mkdir(parents=True, exist_ok=True)
    traj, obs = result.traj, result.observer
    t = traj.t
    written: list[Path] = []
    show = result.record[: min(len(result.record), 4)]

    fig, axes = plt.subplots(
        len(show), 1, figsize=(7.0, 2.2 * len(show)), sharex=True, squeeze=False
    )
    for ax, h in zip(axes[:, 0], show):
        ax.plot(t, obs.omega[:, h], label="CF", lw=1.2)
        ax.plot(t, result.pll_omega[h], label="PLL", lw=0.8, alpha=0.8)
        ax.plot(t, obs.omega_fdf[:, h], label="FDF", lw=0.8, ls="--")
        ax.set_ylabel(f"bus {h + 1}\n$\\omega$ [rad/s]")
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    p = outdir / "omega_compare.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 4.6), sharex=True)
    for h in show:
        ax1.plot(t, obs.rho[:, h], lw=1.0, label=f"bus {h + 1}")
        ax2.plot(t, obs.omega[:, h], lw=1.0, label=f"bus {h + 1}")
    ax1.set_ylabel(r"$\rho$ [1/s]")
    ax2.set_ylabel(r"$\omega$ [rad/s]")
    ax2.set_xlabel("time [s]")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    p = outdir / "complex_frequency.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7.0, 3.0))
    ax.plot(t, obs.coi / (2.0 * np.pi), lw=1.2)
    ax.set_ylabel(r"$\Delta f_{COI}$ [Hz]")
    ax.set_xlabel("time [s]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "coi_frequency.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    if result.estimates:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.0), sharex=True)
        for ests, marker, label in (
            (result.estimates, "o", "exact"),
            (result.estimates_approx, "x", "approx"),
        ):
            if not ests:
                continue
            ts = [e.t_start for e in ests]
            ax1.plot(ts, [e.gamma_p for e in ests], marker, ms=3.5, label=label)
            ax2.plot(ts, [e.gamma_q for e in ests], marker, ms=3.5, label=label)
        ax1.set_ylabel(r"$\hat\gamma_p$")
        ax2.set_ylabel(r"$\hat\gamma_q$")
        for ax in (ax1, ax2):
            ax.set_xlabel("window start [s]")
            ax.grid(alpha=0.3)
            ax.legend(fontsize=8)
        fig.tight_layout()
        p = outdir / "vdl_estimates.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    return written


def write_outputs(
    outdir: Path, result: RunResult, emit_plots: bool = False
) -> list[Path]:
    outdir = Path(outdir)
    files = [outdir / "trajectory.csv", outdir / "summary.json"]
    write_trajectory_csv(files[0], result)
    write_summary(files[1], result)
    if result.estimates or result.estimates_approx:
        p = outdir / "estimates.csv"
        write_estimates_csv(p, result)
        files.append(p)
    if emit_plots:
        files += render_figures(outdir, result)
    return files

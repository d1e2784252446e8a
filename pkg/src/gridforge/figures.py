"""Matplotlib renderers for the report paths: Bode plots, singular-value
sweeps and time-series panels, written next to their CSV companions."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .synthesis import InverterDesign
from .timeseries import TimeSeries

__all__ = ["render_bode", "render_sigma", "render_timeseries"]

plt.rcParams.update({
    "figure.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
})


def render_bode(design: InverterDesign, path, points: int = 400) -> Path:
    cs = design.controllers
    ws = np.logspace(-1, 5, points)
    named = [
        ("Kc", "inner current"),
        ("Kv_d", "d voltage"),
        ("Kv_q", "q voltage"),
        ("Keta_d", "d coupling"),
        ("Keta_q", "q coupling"),
        ("H_pll", "PLL filter"),
    ]
    fig, (ax_m, ax_p) = plt.subplots(2, 1, sharex=True, figsize=(6.5, 5.5))
    for attr, label in named:
        tf = getattr(cs, attr)
        vals = tf.eval_unchecked(1j * ws)
        mag = 20 * np.log10(np.maximum(np.abs(vals), 1e-12))
        ax_m.semilogx(ws, mag, label=label)
        ax_p.semilogx(ws, np.degrees(np.unwrap(np.angle(vals))), label=label)
    ax_m.set_ylabel("magnitude [dB]")
    ax_m.legend(fontsize=7, ncol=2)
    ax_p.set_ylabel("phase [deg]")
    ax_p.set_xlabel("frequency [rad/s]")
    fig.suptitle("compensator frequency responses")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def render_sigma(table: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ws = table[:, 0]
    for col, label, style in (
        (1, r"$\sigma_{max}(S)$", "-"),
        (2, r"$\sigma_{min}(S)$", "--"),
        (3, r"$\sigma_{max}(T)$", "-"),
        (4, r"$\sigma_{min}(T)$", "--"),
    ):
        vals = 20 * np.log10(np.maximum(table[:, col], 1e-12))
        ax.semilogx(ws, vals, style, label=label)
    ax.set_xlabel("frequency [rad/s]")
    ax.set_ylabel("singular values [dB]")
    ax.set_ylim(-80, 10)
    ax.legend(fontsize=8)
    ax.set_title("sensitivity / complementary sensitivity sweep")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def render_timeseries(ts: TimeSeries, path, n_inverters: int | None = None) -> Path:
    if n_inverters is None:
        n_inverters = sum(1 for c in ts.columns if c.endswith("_p_w"))
    t = ts.t
    fig, axes = plt.subplots(4, 1, sharex=True, figsize=(7.0, 8.0))
    for i in range(n_inverters):
        axes[0].plot(t, ts.column(f"inv{i + 1}_p_w") / 1e3, label=f"inv{i + 1}")
        axes[1].plot(t, ts.column(f"inv{i + 1}_w1_rad_s") / (2 * math.pi))
        axes[2].plot(t, ts.column(f"inv{i + 1}_vcq_v"))
    axes[0].set_ylabel("P [kW]")
    axes[0].legend(fontsize=7, ncol=min(n_inverters, 4))
    axes[1].set_ylabel("frequency [Hz]")
    axes[2].set_ylabel(r"$v_C^q$ [V]")
    axes[3].plot(t, ts.column("pcc_v_amp_v"), color="k", label="PCC amplitude")
    if "breaker_closed" in ts.columns and np.any(ts.column("breaker_closed") > 0):
        ax2 = axes[3].twinx()
        ax2.plot(t, ts.column("breaker_closed"), color="tab:red", alpha=0.5, label="breaker")
        ax2.set_ylabel("breaker closed")
        ax2.grid(False)
    axes[3].set_ylabel("PCC voltage [V]")
    axes[3].set_xlabel("time [s]")
    fig.suptitle(f"scenario {ts.meta.get('scenario', '')}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)

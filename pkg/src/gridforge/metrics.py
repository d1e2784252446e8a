"""Post-processing of recorded runs: steady-state sharing, frequency and
voltage deviations, settling times, observed droop slopes and power balance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario
from .timeseries import TimeSeries

__all__ = ["InsufficientWindow", "EventMetrics", "MetricsReport", "metrics", "power_balance"]

# fundamental periods a steady window must span before averages are trusted
MIN_PERIODS = 20


class InsufficientWindow(ValueError):
    """Steady-state window shorter than the minimum number of fundamental periods."""


@dataclass
class EventMetrics:
    t_event: float
    window: tuple[float, float]
    sharing: list[float]
    p_total_w: float
    f_hz: float
    f_dev_hz: float
    v_pcc_v: float
    v_pcc_dev_pct: float
    settle_s: list[float]
    iline_d_a: list[float]
    vcd_v: list[float]
    max_vcq_over_v0: float


@dataclass
class MetricsReport:
    scenario: str
    events: list[EventMetrics]
    droop_slope_w_per_inverter: list[float] = field(default_factory=list)
    droop_slope_w_aggregate: float = float("nan")
    droop_slope_v_per_inverter: list[float] = field(default_factory=list)
    q_regulation: float = float("nan")
    power_balance_max_rel: float = float("nan")

    def rows(self) -> tuple[list[str], list[float]]:
        """One machine-readable row of headline numbers."""
        header = ["n_events", "f_dev_hz_last", "v_pcc_dev_pct_last",
                  "settle_s_max", "droop_slope_w_aggregate",
                  "q_regulation", "power_balance_max_rel"]
        last = self.events[-1]
        settle_max = max((max(e.settle_s) for e in self.events[1:]), default=0.0)
        return header, [
            float(len(self.events)), last.f_dev_hz, last.v_pcc_dev_pct,
            settle_max, self.droop_slope_w_aggregate,
            self.q_regulation, self.power_balance_max_rel,
        ]

    def text(self) -> str:
        lines = [f"metrics for scenario {self.scenario}"]
        for e in self.events:
            lines.append(
                f"  event t={e.t_event:g}s window [{e.window[0]:.3f}, {e.window[1]:.3f}]s:"
            )
            lines.append(
                f"    sharing {['%.4f' % s for s in e.sharing]}  P={e.p_total_w:.0f} W"
            )
            lines.append(
                f"    f={e.f_hz:.4f} Hz (dev {e.f_dev_hz:+.4f}), "
                f"v_pcc={e.v_pcc_v:.2f} V (dev {e.v_pcc_dev_pct:+.2f} %)"
            )
            lines.append(
                f"    settle(2%)={['%.3f' % s for s in e.settle_s]} s, "
                f"max|vcq|/v0={e.max_vcq_over_v0:.2e}"
            )
        if self.droop_slope_w_per_inverter:
            lines.append(
                "  observed freq droop dw/di [rad/s/A]: "
                + ", ".join(f"{s:.5f}" for s in self.droop_slope_w_per_inverter)
                + f"; aggregate {self.droop_slope_w_aggregate:.5f}"
            )
            lines.append(
                "  observed volt droop dv/di [V/A]: "
                + ", ".join(f"{s:.5f}" for s in self.droop_slope_v_per_inverter)
            )
        lines.append(f"  q regulation max|vcq|/v0 (final window): {self.q_regulation:.3e}")
        lines.append(f"  power balance worst relative residual: {self.power_balance_max_rel:.3e}")
        return "\n".join(lines)


def _event_times(scenario: Scenario) -> list[float]:
    times = [e.t for e in scenario.load.events]
    if scenario.grid is not None:
        times += [e.t for e in scenario.grid.events]
    times = sorted(set(times))
    return times


def _steady_window(t0: float, t1: float, f0: float) -> tuple[float, float]:
    span = t1 - t0
    w_start = t0 + 2.0 * span / 3.0
    if (t1 - w_start) < MIN_PERIODS / f0:
        raise InsufficientWindow(
            f"steady window after t={t0:g}s spans {t1 - w_start:.3f}s "
            f"(< {MIN_PERIODS} fundamental periods)"
        )
    return w_start, t1


def _settle_time(t, y, t_event, t_end, final, band):
    mask = (t > t_event) & (t < t_end)
    out = np.abs(y - final) > band
    idx = np.where(mask & out)[0]
    if len(idx) == 0:
        return 0.0
    return float(t[idx[-1]] - t_event)


def power_balance(ts: TimeSeries, scenario: Scenario, guard: float = 0.5) -> float:
    """Worst relative mismatch of source power vs load + line loss + grid import.

    Samples within ``guard`` seconds after any event are excluded: during
    transients the line inductors exchange stored energy and the algebraic
    balance is not expected to close.
    """
    n = len(scenario.inverters)
    t = ts.t
    va = ts.column("pcc_v_alpha_v")
    vb = ts.column("pcc_v_beta_v")
    closed = ts.column("breaker_closed") > 0.5
    load_val = ts.column("load_value")

    p_src = np.zeros(len(ts))
    p_loss = np.zeros(len(ts))
    ia_tot = np.zeros(len(ts))
    ib_tot = np.zeros(len(ts))
    for i in range(n):
        p_src += ts.column(f"inv{i + 1}_p_w")
        idl = ts.column(f"inv{i + 1}_iline_d_a")
        iql = ts.column(f"inv{i + 1}_iline_q_a")
        th = ts.column(f"inv{i + 1}_theta1_rad")
        p_loss += scenario.inverters[i].line.R * (idl**2 + iql**2)
        ia_tot += idl * np.cos(th) - iql * np.sin(th)
        ib_tot += idl * np.sin(th) + iql * np.cos(th)

    if scenario.load.kind == "resistance":
        p_load = (va**2 + vb**2) / load_val
        ila = va / load_val
        ilb = vb / load_val
    elif scenario.load.kind == "current":
        vmag = np.hypot(va, vb)
        scale = np.where(vmag > 1e-9, load_val / np.maximum(vmag, 1e-9), 0.0)
        ila = va * scale
        ilb = vb * scale
        p_load = va * ila + vb * ilb
    else:  # direct injection: the sink is the recorded line current itself
        p_load = p_src.copy()
        ila = ia_tot
        ilb = ib_tot

    p_grid = np.where(closed, va * (ia_tot - ila) + vb * (ib_tot - ilb), 0.0)

    quiet = np.ones(len(ts), dtype=bool)
    for ev in _event_times(scenario):
        quiet &= ~((t >= ev) & (t < ev + guard))
    residual = p_src - p_load - p_loss - p_grid
    scale = np.maximum(np.abs(p_src), 0.01 * scenario.base.s_base)
    rel = np.abs(residual) / scale
    return float(rel[quiet].max()) if quiet.any() else float("nan")


def metrics(ts: TimeSeries, scenario: Scenario) -> MetricsReport:
    """Per-event steady-state metrics and cross-event droop slope fits."""
    if len(ts) == 0:
        raise ValueError("empty time series")
    n = len(scenario.inverters)
    t = ts.t
    f0 = scenario.base.f0
    w0 = scenario.base.omega0
    events = _event_times(scenario)
    bounds = events + [scenario.sim.duration]

    all_events: list[EventMetrics] = []
    for k, t_ev in enumerate(events):
        w = _steady_window(t_ev, bounds[k + 1], f0)
        # right edge exclusive: the sample at the next event time already
        # carries post-event values
        m = (t >= w[0]) & (t < w[1])
        if not m.any():
            raise InsufficientWindow(f"no samples inside steady window {w}")
        p = np.array([ts.column(f"inv{i + 1}_p_w")[m].mean() for i in range(n)])
        p_tot = float(p.sum())
        f_hz = float(
            np.mean([ts.column(f"inv{i + 1}_w1_rad_s")[m].mean() for i in range(n)])
            / (2 * math.pi)
        )
        v_pcc = float(ts.column("pcc_v_amp_v")[m].mean())
        settle = []
        for i in range(n):
            y = ts.column(f"inv{i + 1}_p_w")
            final = y[m].mean()
            band = max(0.02 * abs(final), 0.005 * scenario.base.s_base)
            settle.append(_settle_time(t, y, t_ev, bounds[k + 1], final, band))
        vcq_rel = max(
            float(np.abs(ts.column(f"inv{i + 1}_vcq_v")[m]).max()) / scenario.inverters[i].v0
            for i in range(n)
        )
        all_events.append(
            EventMetrics(
                t_event=t_ev,
                window=w,
                sharing=[float(v) for v in (p / p_tot if p_tot else p)],
                p_total_w=p_tot,
                f_hz=f_hz,
                f_dev_hz=f_hz - f0,
                v_pcc_v=v_pcc,
                v_pcc_dev_pct=100.0 * (v_pcc - scenario.base.v_base) / scenario.base.v_base,
                settle_s=settle,
                iline_d_a=[float(ts.column(f"inv{i + 1}_iline_d_a")[m].mean()) for i in range(n)],
                vcd_v=[float(ts.column(f"inv{i + 1}_vcd_v")[m].mean()) for i in range(n)],
                max_vcq_over_v0=vcq_rel,
            )
        )

    report = MetricsReport(scenario=scenario.name, events=all_events)

    # least-squares droop slopes (through the origin) over event transitions
    if len(all_events) >= 2:
        dw = np.array([
            2 * math.pi * (b.f_hz - a.f_hz) for a, b in zip(all_events, all_events[1:])
        ])
        slopes_w, slopes_v = [], []
        for i in range(n):
            di = np.array([
                b.iline_d_a[i] - a.iline_d_a[i]
                for a, b in zip(all_events, all_events[1:])
            ])
            dv = np.array([
                b.vcd_v[i] - a.vcd_v[i] for a, b in zip(all_events, all_events[1:])
            ])
            denom = float(np.dot(di, di))
            slopes_w.append(float(np.dot(dw, di) / denom) if denom > 0 else float("nan"))
            slopes_v.append(float(np.dot(dv, di) / denom) if denom > 0 else float("nan"))
        di_tot = np.array([
            sum(b.iline_d_a) - sum(a.iline_d_a)
            for a, b in zip(all_events, all_events[1:])
        ])
        denom = float(np.dot(di_tot, di_tot))
        report.droop_slope_w_per_inverter = slopes_w
        report.droop_slope_v_per_inverter = slopes_v
        report.droop_slope_w_aggregate = (
            float(np.dot(dw, di_tot) / denom) if denom > 0 else float("nan")
        )

    report.q_regulation = all_events[-1].max_vcq_over_v0
    report.power_balance_max_rel = power_balance(ts, scenario)
    return report

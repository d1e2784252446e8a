"""Structured text and CSV artifacts: design reports, compensator Bode tables,
singular-value sweeps, DC performance and resonance summaries, plus JSON
round-tripping of synthesized controller sets."""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .droop import LinePhasor
from .lineloop import (
    LineModel,
    dc_performance,
    grid_disturbance_response,
    ki_inverse,
    line_tf,
    peak_gain,
    sensitivity_pair,
    sigma_sweep,
)
from .numerics import RationalTF
from .synthesis import ControllerSet, InverterDesign, ki_matrix, resonance_params

__all__ = [
    "design_report",
    "controllers_to_json",
    "controllers_from_json",
    "write_bode_csv",
    "write_sigma_csv",
    "analysis_report",
]

_ROLES = (
    ("Kc", "inner current compensator (plant-inverting PI-over-s form)"),
    ("Kv_d", "d-axis voltage compensator"),
    ("Kv_q", "q-axis voltage compensator (PI, origin pole)"),
    ("Keta_d", "d-axis cross-coupling filter (low-pass on the q drive)"),
    ("Keta_q", "q-axis cross-coupling filter (blocking zero at DC)"),
    ("H_pll", "PLL filter on the normalized quadrature voltage"),
    ("notch", "band-stop at the feedback-matrix resonance"),
    ("pr", "proportional-resonant companion of the band-stop"),
)


def _fmt_poly(c) -> str:
    terms = []
    for k, v in enumerate(c):
        if v == 0.0 and len(c) > 1:
            continue
        if k == 0:
            terms.append(f"{v:.6g}")
        elif k == 1:
            terms.append(f"{v:.6g} s")
        else:
            terms.append(f"{v:.6g} s^{k}")
    return " + ".join(terms) if terms else "0"


def _fmt_tf(tf: RationalTF) -> str:
    return f"({_fmt_poly(tf.num)}) / ({_fmt_poly(tf.den)})"


def _fmt_roots(values) -> str:
    if len(values) == 0:
        return "none"
    return ", ".join(
        f"{v.real:.6g}" if abs(v.imag) < 1e-9 * max(abs(v.real), 1.0)
        else f"{v.real:.6g}{v.imag:+.6g}j"
        for v in values
    )


def design_report(design: InverterDesign) -> str:
    cs = design.controllers
    inv = design.inverter
    line = design.line
    m = design.measurements
    lines = [
        "gridforge design report",
        "=======================",
        "",
        "inputs",
        f"  controller family : {cs.family}",
        f"  filter            : C={inv.C:g} F, L_i={inv.L_i:g} H, R_i={inv.R_i:g} ohm, v_dc={inv.v_dc:g} V",
        f"  line              : R={line.R:g} ohm, X={line.X:g} ohm (|Z|={line.Zbar:.6g}, angle {math.degrees(line.phi):.2f} deg)",
        f"  operating point   : v2={line.v2:g} V, f0={line.omega0 / (2 * math.pi):.6g} Hz",
        "",
        "solved parameters",
        f"  tau    = {cs.tau:.8g} s   (inner loop; lag pole of the voltage loop)",
        f"  z      = {cs.z:.8g} rad/s (shared compensator corner)",
        f"  k      = {cs.k:.8g}       (voltage-loop static gain, |L(j wc)| = 1)",
        f"  alpha  = ({cs.alpha_d:.8g}, {cs.alpha_q:.8g}) ohm (coupling gains)",
        f"  beta   = ({cs.beta_d:.8g}, {cs.beta_q:.8g})     (direct droop gains)",
        f"  gamma  = ({cs.gamma_d:.8g}, {cs.gamma_q:.8g}) ohm (scaling factors)",
        "",
        "steady-state droop slopes",
        f"  voltage   : dv = {cs.beta_d / cs.k:+.6g} * di_d {-cs.alpha_d:+.6g} * di_q   [V/A]",
        f"  frequency : v2*dw = {cs.alpha_q:+.6g} * di_d {cs.beta_q / cs.k:+.6g} * di_q [V*rad/s/A]",
        "",
        "compensators (roles, rational forms, poles / zeros)",
    ]
    for attr, role in _ROLES:
        tf = getattr(cs, attr)
        if tf is None:
            continue
        lines.append(f"  {attr:7s} {role}")
        lines.append(f"          {_fmt_tf(tf)}")
        lines.append(f"          poles: {_fmt_roots(tf.poles())}; zeros: {_fmt_roots(tf.zeros())}")
    lines += [
        "",
        "measured checks",
        f"  inner loop margin        : {m['pm_inner_deg']:.3f} deg",
        f"  d voltage loop           : margin {m['pm_d_deg']:.3f} deg at {m['wc_d_rad_s']:.4g} rad/s",
        f"  q voltage loop           : margin {m['pm_q_deg']:.3f} deg at {m['wc_q_rad_s']:.4g} rad/s",
        f"  max |T-1| below {m['t_unity_band_rad_s']:.4g} rad/s : {m['t_unity_error_in_band']:.3e}",
        f"  nominal modulation index : {m['modulation_nominal']:.4f} (headroom {1 - m['modulation_nominal']:.4f})",
    ]
    if "ki_dc_residual" in m:
        lines.append(f"  DC feedback-matrix residual vs line: {m['ki_dc_residual']:.3e}")
    if cs.gamma_d > 0 and cs.gamma_q > 0:
        w_i, xi_i = resonance_params(cs, design.line)
        lines.append(f"  feedback-matrix resonance: w_i={w_i:.6g} rad/s, xi_i={xi_i:.6g}")
    lines.append("")
    return "\n".join(lines)


def _tf_to_obj(tf):
    if tf is None:
        return None
    return {"num": list(tf.num), "den": list(tf.den)}


def _tf_from_obj(obj):
    if obj is None:
        return None
    return RationalTF(obj["num"], obj["den"])


def controllers_to_json(design: InverterDesign) -> str:
    cs = design.controllers
    payload = {
        "format": "gridforge-controllers",
        "version": 1,
        "family": cs.family,
        "scalars": {
            name: getattr(cs, name)
            for name in ("tau", "k", "z", "beta_d", "beta_q", "alpha_d", "alpha_q",
                         "gamma_d", "gamma_q")
        },
        "compensators": {
            name: _tf_to_obj(getattr(cs, name))
            for name, _ in _ROLES
        },
        "inverter": asdict(design.inverter),
        "line": {"R": design.line.R, "X": design.line.X, "v2": design.line.v2,
                 "omega0": design.line.omega0},
        "measurements": design.measurements,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def controllers_from_json(text: str) -> InverterDesign:
    from .plant import InverterParams

    payload = json.loads(text)
    if payload.get("format") != "gridforge-controllers":
        raise ValueError("not a gridforge controller file")
    comp = payload["compensators"]
    cs = ControllerSet(
        Kc=_tf_from_obj(comp["Kc"]),
        Kv_d=_tf_from_obj(comp["Kv_d"]),
        Kv_q=_tf_from_obj(comp["Kv_q"]),
        Keta_d=_tf_from_obj(comp["Keta_d"]),
        Keta_q=_tf_from_obj(comp["Keta_q"]),
        H_pll=_tf_from_obj(comp["H_pll"]),
        notch=_tf_from_obj(comp.get("notch")),
        pr=_tf_from_obj(comp.get("pr")),
        family=payload["family"],
        **payload["scalars"],
    )
    inv = InverterParams(**payload["inverter"])
    li = payload["line"]
    line = LinePhasor(R=li["R"], X=li["X"], v2=li["v2"], omega0=li["omega0"])
    return InverterDesign(inv, line, cs, payload.get("measurements", {}))


def write_bode_csv(tf: RationalTF, path, ws: np.ndarray) -> Path:
    vals = tf.eval_unchecked(1j * ws)
    rows = ["freq_rad_s,mag_db,phase_deg"]
    for w, v in zip(ws, vals):
        rows.append(f"{w:.17g},{20 * math.log10(max(abs(v), 1e-300)):.17g},"
                    f"{math.degrees(np.angle(v)):.17g}")
    path = Path(path)
    path.write_text("\n".join(rows) + "\n")
    return path


def write_sigma_csv(table: np.ndarray, path) -> Path:
    rows = ["freq_rad_s,smax,smin,tmax,tmin"]
    for row in table:
        rows.append(",".join(f"{v:.17g}" for v in row))
    path = Path(path)
    path.write_text("\n".join(rows) + "\n")
    return path


def analysis_report(design: InverterDesign, out_dir, points: int = 400) -> dict:
    """Frequency-domain analysis artifacts for one design against its line.

    Writes per-compensator Bode tables, the S/T singular-value sweep, a DC
    performance summary and the resonance report; returns the artifact paths
    plus headline numbers.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cs = design.controllers
    lm = LineModel.from_xr(design.line.R, design.line.X, design.line.omega0)
    ws = np.logspace(-2, 5, points)

    paths = {}
    for name, _role in _ROLES:
        tf = getattr(cs, name)
        if tf is None:
            continue
        paths[f"bode_{name}"] = write_bode_csv(tf, out / f"bode_{name}.csv", ws)

    pair = sensitivity_pair(line_tf(lm), ki_matrix(cs))
    table = sigma_sweep(pair, ws)
    paths["sigma"] = write_sigma_csv(table, out / "sigma_sweep.csv")

    perf = dc_performance(cs.gamma_d, lm)
    summary = [
        "gridforge analysis report",
        "=========================",
        f"line: R={lm.R:g} ohm, X={lm.X:g} ohm, wn={lm.wn:.6g} rad/s, xi={lm.xi:.6g}",
        "",
        "steady-state performance (singular values)",
        f"  sigma_max(S(0)) = {perf.smax:.8g}",
        f"  sigma_min(S(0)) = {perf.smin:.8g}",
        f"  sigma_max(T(0)) = {perf.tmax:.8g}",
        f"  sigma_min(T(0)) = {perf.tmin:.8g}",
    ]
    results = {"dc": perf, "paths": paths, "sigma_table": table}
    if cs.gamma_d > 0 and cs.gamma_q > 0:
        w_i, xi_i = resonance_params(cs, design.line)
        resp = grid_disturbance_response(cs, lm)
        w_pk, s_pk = peak_gain(resp, max(w_i / 10, 1e-2), w_i * 10, 600)
        kinv_pk = peak_gain(ki_inverse(cs), max(w_i / 10, 1e-2), w_i * 10, 600)
        summary += [
            "",
            "resonance",
            f"  w_i = {w_i:.6g} rad/s, xi_i = {xi_i:.6g}",
            f"  disturbance-injection gain peak: sigma={kinv_pk[1]:.6g} at {kinv_pk[0]:.6g} rad/s",
            f"  closed-loop response peak: sigma={s_pk:.6g} at {w_pk:.6g} rad/s",
        ]
        results["resonance"] = {"w_i": w_i, "xi_i": xi_i,
                                "resp_peak": (w_pk, s_pk), "kinv_peak": kinv_pk}
    (out / "analysis_report.txt").write_text("\n".join(summary) + "\n")
    paths["report"] = out / "analysis_report.txt"
    return results

"""Synthesis of the cascaded inverter controller set.

Inner current loop, outer voltage loops (lag/PI), cross-coupling filters, PLL
filter, normalized gain parameterization for an arbitrary line angle, notch/PR
resonance damping, and the closed-form steady-state droop slopes the structure
produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal, NamedTuple, Optional

import numpy as np

from .droop import LinePhasor
from .numerics import (
    RationalTF,
    TFMatrix2,
    phase_margin,
)
from .plant import DQPair, InverterParams, current_plant

__all__ = [
    "SynthesisError",
    "Infeasible",
    "GainSet",
    "DesignSpec",
    "ControllerSet",
    "InverterDesign",
    "solve_lag_parameters",
    "design_inner",
    "design_lag",
    "design_pi_q",
    "design_pll",
    "design_coupling",
    "normalize_gains",
    "voltage_loops",
    "ki_matrix",
    "resonance_params",
    "design_notch",
    "with_notch",
    "steady_state_droop",
    "mismatch_norm",
    "load_rejection_matrix",
    "synthesize",
]

Family = Literal["resistive", "inductive", "general"]


class SynthesisError(RuntimeError):
    """Controller synthesis could not complete."""


class Infeasible(SynthesisError):
    """Requested design targets cannot be met (e.g. phase margin out of range)."""


class GainSet(NamedTuple):
    alpha_d: float
    alpha_q: float
    beta_d: float
    beta_q: float


@dataclass(frozen=True)
class DesignSpec:
    """Targets and scaling factors for one inverter's controller set."""

    wc: float
    pm_deg: float
    line: LinePhasor
    inverter: InverterParams
    family: Family = "general"
    gamma_d: float = 1.0
    gamma_q: float = 1.0
    beta_lag: float = 0.01
    beta_q: Optional[float] = None  # explicit PLL-integrator gain override
    notch_xi0: Optional[float] = None  # band-stop damping; None disables

    def __post_init__(self):
        if not 0.0 < self.pm_deg < 90.0:
            raise Infeasible(
                f"target phase margin {self.pm_deg} deg outside the attainable (0, 90)"
            )
        if self.wc <= 0.0:
            raise Infeasible("crossover frequency must be positive")
        if not 0.0 <= self.beta_lag < 1.0:
            raise Infeasible("lag ratio must lie in [0, 1)")
        if self.family not in ("resistive", "inductive", "general"):
            raise Infeasible(f"unknown controller family {self.family!r}")


@dataclass(frozen=True)
class ControllerSet:
    """Immutable synthesized compensator set for one inverter."""

    Kc: RationalTF
    Kv_d: RationalTF
    Kv_q: RationalTF
    Keta_d: RationalTF
    Keta_q: RationalTF
    H_pll: RationalTF
    tau: float
    k: float
    z: float
    beta_d: float
    beta_q: float
    alpha_d: float
    alpha_q: float
    gamma_d: float
    gamma_q: float
    family: str = "general"
    notch: Optional[RationalTF] = None
    pr: Optional[RationalTF] = None

    def gains(self) -> GainSet:
        return GainSet(self.alpha_d, self.alpha_q, self.beta_d, self.beta_q)


@dataclass(frozen=True)
class InverterDesign:
    """Physical parameters, line, synthesized controllers and measured checks."""

    inverter: InverterParams
    line: LinePhasor
    controllers: ControllerSet
    measurements: dict


def solve_lag_parameters(pm_deg: float, wc: float) -> tuple[float, float]:
    """Unique (tau, z) placing the max phase boost pm_deg at frequency wc.

    The boost comes from the zero z against the inner-loop pole 1/tau; forcing
    the maximum onto wc pins both: tau*z = (1-sin pm)/(1+sin pm), z/tau = wc^2.
    """
    if not 0.0 < pm_deg < 90.0:
        raise Infeasible("phase margin target must lie strictly inside (0, 90) deg")
    sn = math.sin(math.radians(pm_deg))
    q = (1.0 - sn) / (1.0 + sn)
    tau = math.sqrt(q) / wc
    if tau <= 0.0:
        raise Infeasible("solved inner time constant is non-positive")
    return tau, wc * math.sqrt(q)


def design_inner(p: InverterParams, tau: float) -> tuple[RationalTF, RationalTF]:
    """Inner current compensator (L_i + R_i/s)/tau and its exact closed loop.

    The compensator inverts the current plant so the open loop is 1/(tau s);
    the closed loop is verified to collapse to 1/(tau s + 1) by symbolic
    cancellation rather than assumed.
    """
    if tau <= 0.0:
        raise Infeasible("inner loop time constant must be positive")
    kc = RationalTF([p.R_i / tau, p.L_i / tau], [0.0, 1.0])
    open_loop = (kc * current_plant(p)).cancel()
    tc = open_loop.feedback().cancel()
    expect = RationalTF([1.0], [1.0, tau])
    if max(
        abs(a - b) for a, b in zip(tc.num, expect.num)
    ) > 1e-9 or max(abs(a - b) for a, b in zip(tc.den, expect.den)) > 1e-9 * max(
        1.0, tau
    ):
        raise SynthesisError("inner loop did not reduce to 1/(tau s + 1)")
    return kc, tc


def _loop_gain_k(C: float, tau: float, z: float, beta_d: float, wc: float) -> float:
    """Static gain making |L(j wc)| = 1 for L = k (s+z) / ((s+b z)(tau s+1) C s)."""
    f = (
        RationalTF([z, 1.0], [beta_d * z, 1.0])
        * RationalTF([1.0], [1.0, tau])
        * RationalTF([1.0], [0.0, C])
    )
    return 1.0 / abs(f.eval_unchecked(1j * wc))


def normalize_gains(
    gamma_d: float, gamma_q: float, line: LinePhasor, k: float
) -> GainSet:
    """Scaled gain quadruple tied to the line angle.

    beta = gamma k R/Zbar and alpha = gamma X/Zbar, so (beta/(k gamma))^2 +
    (alpha/gamma)^2 = 1: the pair traces the line's impedance circle.
    """
    if line.Zbar <= 0:
        raise ValueError("line impedance magnitude must be positive")
    r_ratio = line.R / line.Zbar
    x_ratio = line.X / line.Zbar
    return GainSet(
        alpha_d=gamma_d * x_ratio,
        alpha_q=gamma_q * x_ratio,
        beta_d=gamma_d * k * r_ratio,
        beta_q=gamma_q * k * r_ratio,
    )


def design_lag(spec: DesignSpec) -> tuple[RationalTF, float, float, float]:
    """d-axis voltage compensator k(s+z)/(s+beta_d z) hitting (pm, wc).

    Returns (Kv_d, tau, z, k). For the general family beta_d is tied to k
    through the gain normalization, so k is solved as a fixed point; the
    dependence is weak (beta_d z << wc) and converges in a few iterations.
    """
    tau, z = solve_lag_parameters(spec.pm_deg, spec.wc)
    C = spec.inverter.C
    if spec.family == "inductive":
        beta_d = 0.0
        k = _loop_gain_k(C, tau, z, beta_d, spec.wc)
    elif spec.family == "resistive":
        beta_d = spec.beta_lag
        k = _loop_gain_k(C, tau, z, beta_d, spec.wc)
    else:
        k = _loop_gain_k(C, tau, z, 0.0, spec.wc)
        mu = spec.gamma_d * line_r_ratio(spec.line)
        for _ in range(60):
            k_next = _loop_gain_k(C, tau, z, mu * k, spec.wc)
            if abs(k_next - k) <= 1e-13 * k:
                k = k_next
                break
            k = k_next
        else:
            raise SynthesisError("loop gain normalization did not converge")
        beta_d = mu * k
    kv_d = RationalTF([k * z, k], [beta_d * z, 1.0])
    return kv_d, tau, z, k


def line_r_ratio(line: LinePhasor) -> float:
    return line.R / line.Zbar


def design_pi_q(k: float, z: float) -> RationalTF:
    """q-axis voltage compensator k(s+z)/s; the origin pole rejects constant
    reactive-current disturbances completely."""
    if k <= 0 or z <= 0:
        raise ValueError("PI gain and zero must be positive")
    return RationalTF([k * z, k], [0.0, 1.0])


def design_pll(beta_q: float, z: float) -> RationalTF:
    """PLL filter (s + beta_q z)/s applied to the normalized quadrature voltage.

    beta_q = 0 degenerates to H = 1: proportional frequency correction with no
    integral memory (the pure-inductive design carries droop in v_C^q itself).
    """
    if z <= 0:
        raise ValueError("corner frequency must be positive")
    if beta_q < 0:
        raise ValueError("PLL integrator gain must be non-negative")
    if beta_q == 0.0:
        return RationalTF([1.0], [1.0])
    return RationalTF([beta_q * z, 1.0], [0.0, 1.0])


def design_coupling(
    alpha_d: float, alpha_q: float, z: float, h_pll: RationalTF
) -> tuple[RationalTF, RationalTF]:
    """Cross-coupling filters: a low-pass on the d side, and the q side shaped
    by 1/H so the composite H*Keta_q stays a plain low-pass.

    With an integrator in H the q filter carries a blocking zero at the
    origin, which is what drives the quadrature voltage to zero in steady
    state. H is biproper, so 1/H is a proper rational and needs no roll-off.
    """
    lp = RationalTF([z], [z, 1.0])
    keta_d = alpha_d * lp
    keta_q = (alpha_q * lp * h_pll.reciprocal()).cancel()
    return keta_d, keta_q


def voltage_loops(cs: ControllerSet, C: float) -> dict:
    """Open/closed voltage-loop transfer functions over the ideal inner loop."""
    gv = RationalTF([1.0], [0.0, C])
    tc = RationalTF([1.0], [1.0, cs.tau])
    out = {}
    for axis, kv in (("d", cs.Kv_d), ("q", cs.Kv_q)):
        loop = (kv * tc * gv).cancel()
        out[f"L_{axis}"] = loop
        out[f"T_{axis}"] = loop.feedback().cancel()
        out[f"S_{axis}"] = loop.sensitivity().cancel()
    out["T_c"] = tc
    out["G_v"] = gv
    return out


def ki_matrix(cs: ControllerSet) -> TFMatrix2:
    """Equivalent current-feedback matrix of the controller set.

    Closed form (1/(k(s+z))) [[s+bd z, -k ad z], [k aq z, s+bq z]]; at DC it
    equals (1/Zbar) diag(gamma) G_line(0)^-1 when the gains came from
    normalize_gains. A notch augmentation multiplies through as the scalar
    H_PR (see with_notch).
    """
    k, z = cs.k, cs.z
    scale = RationalTF([1.0], [k * z, k])
    m = TFMatrix2(
        (
            (
                scale * RationalTF([cs.beta_d * z, 1.0], [1.0]),
                scale * (-k * cs.alpha_d * z),
            ),
            (
                scale * (k * cs.alpha_q * z),
                scale * RationalTF([cs.beta_q * z, 1.0], [1.0]),
            ),
        )
    )
    if cs.pr is not None:
        m = m * cs.pr
    return m


def resonance_params(cs: ControllerSet, line: LinePhasor) -> tuple[float, float]:
    """(w_i, xi_i): natural frequency and damping of the det(K_i) quadratic."""
    if cs.gamma_d <= 0 or cs.gamma_q <= 0:
        raise ValueError("resonance parameters need positive scaling factors")
    g = math.sqrt(cs.gamma_d * cs.gamma_q)
    w_i = cs.k * cs.z * g
    xi_i = ((cs.gamma_d + cs.gamma_q) / (2.0 * g)) * (line.R / line.Zbar)
    return w_i, xi_i


def design_notch(w_i: float, xi_i: float, xi_0: float) -> tuple[RationalTF, RationalTF]:
    """Band-stop H_n at w_i and its proportional-resonant inverse H_PR.

    |H_n(j w_i)| = xi_i/xi_0 and H_n * H_PR is identically 1.
    """
    if xi_0 <= xi_i:
        raise ValueError("notch damping xi_0 must exceed the loop damping xi_i")
    num = [w_i * w_i, 2.0 * xi_i * w_i, 1.0]
    den = [w_i * w_i, 2.0 * xi_0 * w_i, 1.0]
    hn = RationalTF(num, den)
    return hn, hn.reciprocal()


def with_notch(cs: ControllerSet, xi_0: float, line: LinePhasor) -> ControllerSet:
    """Augment the set so the equivalent-disturbance injection is notched.

    The band-stop goes into the voltage compensators and its resonant inverse
    into the coupling filters; the equivalent feedback matrix becomes
    H_PR * K_i, whose inverse H_n * K_i^-1 has the resonant pole pair at w_i
    cancelled and re-damped at xi_0 (peak drops by ~ xi_0/xi_i). Assigning the
    filters the other way around doubles the resonance in K_i^-1 instead of
    removing it.
    """
    w_i, xi_i = resonance_params(cs, line)
    hn, hpr = design_notch(w_i, xi_i, xi_0)
    return replace(
        cs,
        Kv_d=(cs.Kv_d * hn).cancel(),
        Kv_q=(cs.Kv_q * hn).cancel(),
        Keta_d=(cs.Keta_d * hpr).cancel(),
        Keta_q=(cs.Keta_q * hpr).cancel(),
        notch=hn,
        pr=hpr,
    )


def steady_state_droop(
    cs: ControllerSet, family: str, di: DQPair, v2: float
) -> tuple[float, float]:
    """Steady (voltage, frequency) deviation produced by a current mismatch.

    di = (i0 - i_load) held constant. The families reduce the general
    expressions dv = (bd/k) di_d - ad di_q and v2 dw = aq di_d + (bq/k) di_q.
    """
    if family == "resistive":
        return (cs.beta_d / cs.k) * di.d, (cs.beta_q / (v2 * cs.k)) * di.q
    if family == "inductive":
        return -cs.alpha_d * di.q, (cs.alpha_q / v2) * di.d
    if family == "general":
        dv = (cs.beta_d / cs.k) * di.d - cs.alpha_d * di.q
        dw = (cs.alpha_q * di.d + (cs.beta_q / cs.k) * di.q) / v2
        return dv, dw
    raise ValueError(f"unknown controller family {family!r}")


def droop_polar_form(
    cs: ControllerSet, di: DQPair, v2: float, phi: float
) -> tuple[float, float]:
    """Polar form of the general droop: deviations weighted by |di| and the
    angle sum of line and mismatch directions."""
    mag = di.norm()
    phi_di = math.atan2(di.q, di.d) if mag > 0 else 0.0
    dv = cs.gamma_d * mag * math.cos(phi + phi_di)
    dw = cs.gamma_q * mag * math.sin(phi + phi_di) / v2
    return dv, dw


def mismatch_norm(cs: ControllerSet, dv: float, dw: float, v2: float) -> float:
    """|di| recovered from the weighted deviations (inverse of the droop map)."""
    return math.sqrt(
        (v2 / cs.gamma_q) ** 2 * dw**2 + (1.0 / cs.gamma_d) ** 2 * dv**2
    )


def load_rejection_matrix(cs: ControllerSet, C: float) -> TFMatrix2:
    """Closed-loop map from load-current deviations to capacitor voltages.

    Solves the two coupled cross-injection relations for (eta_d, eta_q) over
    the rationals and composes the outer-loop voltage expressions; columns are
    (di_load_d, di_load_q), rows (dv_C_d, dv_C_q).
    """
    loops = voltage_loops(cs, C)
    t_d, s_d = loops["T_d"], loops["S_d"]
    t_q, s_q = loops["T_q"], loops["S_q"]
    tc_inv = RationalTF([1.0, cs.tau], [1.0])

    one = RationalTF([1.0], [1.0])
    zero = RationalTF([0.0], [1.0])
    a_eta = TFMatrix2(
        (
            (one, -(cs.Keta_d * s_q * cs.Kv_q).cancel()),
            ((cs.Keta_q * s_d * cs.Kv_d).cancel(), one),
        )
    )
    rhs = TFMatrix2(
        (
            (zero, -(cs.Keta_d * t_q).cancel()),
            ((cs.Keta_q * t_d).cancel(), zero),
        )
    )
    eta_of_g = (a_eta.inverse() @ rhs).cancel()
    direct = TFMatrix2(
        (
            ((one / cs.Kv_d).cancel(), zero),
            (zero, (one / cs.Kv_q).cancel()),
        )
    )
    t_diag = TFMatrix2(((t_d, zero), (zero, t_q)))
    v_of_g = (t_diag @ (eta_of_g + direct)).cancel()
    # g = i0 - Tc^-1 i_load; deviation in i_load enters with -Tc^-1
    return (v_of_g * (-1.0 * tc_inv)).cancel()


def _measure(cs: ControllerSet, spec: DesignSpec) -> dict:
    loops = voltage_loops(cs, spec.inverter.C)
    meas: dict = {}
    pm_d = phase_margin(loops["L_d"])
    meas["pm_d_deg"] = pm_d.margin_deg
    meas["wc_d_rad_s"] = pm_d.crossover_rad_s
    pm_q = phase_margin(loops["L_q"])
    meas["pm_q_deg"] = pm_q.margin_deg
    meas["wc_q_rad_s"] = pm_q.crossover_rad_s
    inner_loop = RationalTF([1.0], [0.0, cs.tau])
    meas["pm_inner_deg"] = phase_margin(inner_loop).margin_deg
    # quantify the T ~ 1 simplification inside its claimed band
    if cs.gamma_d > 0 and cs.gamma_q > 0:
        band = min(cs.k * cs.z * math.sqrt(cs.gamma_d * cs.gamma_q), spec.wc / 2.0)
    else:
        band = spec.wc / 10.0
    ws = np.logspace(-2, math.log10(max(band, 1e-1)), 60)
    err = 0.0
    for axis in ("d", "q"):
        t_ax = loops[f"T_{axis}"]
        err = max(err, float(np.max(np.abs(t_ax.eval_unchecked(1j * ws) - 1.0))))
    meas["t_unity_error_in_band"] = err
    meas["t_unity_band_rad_s"] = float(band)
    # DC consistency of the equivalent feedback matrix with the line
    if cs.gamma_d > 0 and cs.gamma_q > 0:
        gl0 = np.array(
            [[spec.line.R, spec.line.X], [-spec.line.X, spec.line.R]]
        ) / spec.line.Zbar**2
        ki0 = ki_matrix(cs).eval(0.0).real
        target = np.diag([cs.gamma_d, cs.gamma_q]) / spec.line.Zbar
        meas["ki_dc_residual"] = float(np.max(np.abs(ki0 @ gl0 - target)))
    # saturation headroom at the nominal operating point
    meas["modulation_nominal"] = spec.line.v2 / spec.inverter.v_dc
    return meas


def synthesize(spec: DesignSpec) -> InverterDesign:
    """Full controller synthesis for one inverter against its line."""
    kv_d, tau, z, k = design_lag(spec)
    kc, _ = design_inner(spec.inverter, tau)
    kv_q = design_pi_q(k, z)

    if spec.family == "resistive":
        alpha_d = alpha_q = 0.0
        beta_d = spec.beta_lag
        beta_q = (
            spec.beta_q if spec.beta_q is not None else spec.gamma_q * k
        )  # R/Zbar = 1 in the resistive normalization
        gamma_d = beta_d / k
        gamma_q = beta_q / k
    elif spec.family == "inductive":
        alpha_d, alpha_q = spec.gamma_d, spec.gamma_q
        beta_d = 0.0
        beta_q = spec.beta_q if spec.beta_q is not None else 0.0
        gamma_d, gamma_q = spec.gamma_d, spec.gamma_q
    else:
        gains = normalize_gains(spec.gamma_d, spec.gamma_q, spec.line, k)
        alpha_d, alpha_q = gains.alpha_d, gains.alpha_q
        beta_d, beta_q = gains.beta_d, gains.beta_q
        if spec.beta_q is not None:
            beta_q = spec.beta_q
        gamma_d, gamma_q = spec.gamma_d, spec.gamma_q

    h_pll = design_pll(beta_q, z)
    keta_d, keta_q = design_coupling(alpha_d, alpha_q, z, h_pll)

    cs = ControllerSet(
        Kc=kc,
        Kv_d=kv_d,
        Kv_q=kv_q,
        Keta_d=keta_d,
        Keta_q=keta_q,
        H_pll=h_pll,
        tau=tau,
        k=k,
        z=z,
        beta_d=beta_d,
        beta_q=beta_q,
        alpha_d=alpha_d,
        alpha_q=alpha_q,
        gamma_d=gamma_d,
        gamma_q=gamma_q,
        family=spec.family,
    )
    if spec.notch_xi0 is not None:
        cs = with_notch(cs, spec.notch_xi0, spec.line)
    return InverterDesign(spec.inverter, spec.line, cs, _measure(cs, spec))

"""Quasi-static droop theory: power flow, linearization, rotation design and
delay-limited robustness of constant and dynamic droop laws.

Droop matrices follow the Laplace-domain convention in which the second row
drives the scaled frequency channel (v2 * delta_dot), i.e. the PCC-amplitude
factor is absorbed into the frequency-row gains. The classic inductive design
with gains (kp, kq) is therefore [[0, kq], [v2*kp, 0]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    NoCrossover,
    RationalTF,
    TFMatrix2,
    apply_channel_integrator,
    phase_margin,
)

__all__ = [
    "SingularAtDC",
    "LinePhasor",
    "PowerPair",
    "DroopInput",
    "GeneralizedDroop",
    "power_flow",
    "h_matrix",
    "rotation_matrix",
    "linearized_power",
    "classic_inductive_droop",
    "classic_resistive_droop",
    "droop_rotation",
    "quasi_static_loop",
    "quasi_static_disturbance_loop",
    "dynamic_droop_lead",
    "delay_limited_margin",
]

# linearization is trusted while the operating point stays inside these bounds;
# beyond them the quadratic error exceeds a few percent
MAX_ANGLE_RAD = 0.2
MAX_RELATIVE_DROP = 0.1


class SingularAtDC(ZeroDivisionError):
    """The quasi-static loop matrix has no rational inverse."""


@dataclass(frozen=True)
class LinePhasor:
    """Line impedance phasor plus the PCC operating point it connects to."""

    R: float
    X: float
    v2: float
    omega0: float

    def __post_init__(self):
        if self.Zbar <= 0:
            raise ValueError("line impedance magnitude must be positive")
        if self.v2 <= 0:
            raise ValueError("PCC voltage amplitude must be positive")

    @property
    def Zbar(self) -> float:
        return math.hypot(self.R, self.X)

    @property
    def phi(self) -> float:
        return math.atan2(self.X, self.R)

    @property
    def rho(self) -> float:
        """Stiffness v2/Zbar mapping (voltage, angle) inputs to power."""
        return self.v2 / self.Zbar

    @property
    def L(self) -> float:
        return self.X / self.omega0


@dataclass(frozen=True)
class PowerPair:
    P: float
    Q: float

    def as_array(self) -> np.ndarray:
        return np.array([self.P, self.Q])


@dataclass(frozen=True)
class DroopInput:
    """Small-signal input pair (amplitude difference, scaled angle)."""

    dv: float
    vdelta: float
    v2: float = 1.0
    within_linear_range: bool = field(init=False)

    def __post_init__(self):
        ok = (
            abs(self.vdelta) / self.v2 < MAX_ANGLE_RAD
            and abs(self.dv) / self.v2 < MAX_RELATIVE_DROP
        )
        object.__setattr__(self, "within_linear_range", bool(ok))


def power_flow(v1: float, v2: float, delta: float, line: LinePhasor) -> PowerPair:
    """Static active/reactive power injected through the line impedance."""
    zb, phi = line.Zbar, line.phi
    p = (v1 * v1 / zb) * math.cos(phi) - (v1 * v2 / zb) * math.cos(phi + delta)
    q = (v1 * v1 / zb) * math.sin(phi) - (v1 * v2 / zb) * math.sin(phi + delta)
    return PowerPair(p, q)


def h_matrix(phi: float) -> np.ndarray:
    """Symmetric involutory map [[cos, sin], [sin, -cos]] of the line angle."""
    c, sn = math.cos(phi), math.sin(phi)
    return np.array([[c, sn], [sn, -c]])


def rotation_matrix(dphi: float) -> np.ndarray:
    """Planar rotation R with R @ h_matrix(phi0) == h_matrix(phi0 + dphi)."""
    c, sn = math.cos(dphi), math.sin(dphi)
    return np.array([[c, -sn], [sn, c]])


def linearized_power(u: DroopInput, line: LinePhasor) -> PowerPair:
    """First-order power flow p = rho * H_phi * [dv, v2*delta]."""
    p = line.rho * (h_matrix(line.phi) @ np.array([u.dv, u.vdelta]))
    return PowerPair(float(p[0]), float(p[1]))


def classic_inductive_droop(kp: float, kq: float, v2: float) -> np.ndarray:
    """P/f-Q/v droop gains as a droop matrix (anti-diagonal)."""
    return np.array([[0.0, kq], [v2 * kp, 0.0]])


def classic_resistive_droop(kp: float, kq: float, v2: float) -> np.ndarray:
    """P/v-Q/f droop gains as a droop matrix (diagonal)."""
    return np.array([[kp, 0.0], [0.0, v2 * kq]])


@dataclass(frozen=True)
class GeneralizedDroop:
    """Droop law K = Lambda^-1 @ left @ Lambda @ base, held in factored form.

    Only the combination Lambda @ K = left @ Lambda @ base is ever needed to
    build loops, and that combination keeps the integrator attached to the
    constant ``base`` rows. Forming K itself would scatter 1/s and s entries
    through the matrix and make DC evaluation needlessly singular.
    """

    left: np.ndarray
    base: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "left", np.asarray(self.left, dtype=float))
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))

    def lambda_k(self) -> TFMatrix2:
        """Lambda @ K as a 2x2 transfer matrix."""
        lam_base = apply_channel_integrator(TFMatrix2.from_constant(self.base))
        return TFMatrix2.from_constant(self.left) @ lam_base


def _as_generalized(k) -> GeneralizedDroop:
    if isinstance(k, GeneralizedDroop):
        return k
    return GeneralizedDroop(np.eye(2), np.asarray(k, dtype=float))


def droop_rotation(
    k0: np.ndarray, phi0: float, line0: LinePhasor, line: LinePhasor
) -> GeneralizedDroop:
    """Rotate a baseline droop design onto a line with a different angle.

    The returned law reproduces the phi0 baseline closed loop exactly on the
    new line; the rotation and stiffness rescale live in the constant left
    factor while the integrator stays tagged to the base rows.
    """
    dphi = line.phi - phi0
    left = (line0.rho / line.rho) * rotation_matrix(dphi)
    return GeneralizedDroop(left, np.asarray(k0, dtype=float))


def _loop_matrix(k, line: LinePhasor) -> tuple[TFMatrix2, TFMatrix2]:
    gk = _as_generalized(k)
    lam_k = gk.lambda_k()
    h_over_rho = TFMatrix2.from_constant(h_matrix(line.phi) / line.rho)
    m = h_over_rho + lam_k
    det = m.det().cancel()
    if det.is_zero():
        raise SingularAtDC("quasi-static loop matrix is singular as a rational object")
    return m, lam_k


def quasi_static_loop(k, line: LinePhasor) -> TFMatrix2:
    """Closed-loop map from (p0_hat + K^-1 d_hat) to p_hat.

    ``k`` is a constant droop matrix or a GeneralizedDroop.
    """
    m, lam_k = _loop_matrix(k, line)
    return (m.inverse() @ lam_k).cancel()


def quasi_static_disturbance_loop(k, line: LinePhasor) -> TFMatrix2:
    """Closed-loop map from the raw disturbance d_hat to p_hat."""
    m, _ = _loop_matrix(k, line)
    lam = apply_channel_integrator(TFMatrix2.identity())
    return (m.inverse() @ lam).cancel()


def dynamic_droop_lead(
    line: LinePhasor, wc: float, a: float
) -> tuple[RationalTF, RationalTF]:
    """Lead-compensated dynamic active-power droop and its open loop.

    Returns (kp(s), L_p(s)). The active-power loop L_p = kp * v2^2 / (X s) is
    a double integrator shaped by the lead pair (wc/sqrt(a), wc*sqrt(a)); the
    static gain is chosen so |L_p(j wc)| = 1, which puts the crossover at the
    lead's maximum-phase frequency and yields margin asin((a-1)/(a+1)).
    """
    if a < 1.0:
        raise ValueError("lead ratio a must be >= 1")
    if wc <= 0.0:
        raise ValueError("crossover frequency must be positive")
    lead = RationalTF([wc / math.sqrt(a), 1.0], [wc * math.sqrt(a), 1.0])
    gain = math.sqrt(a) * wc * wc
    loop = gain * lead * RationalTF([1.0], [0.0, 0.0, 1.0])
    kp = (line.X / line.v2**2) * gain * lead * RationalTF([1.0], [0.0, 1.0])
    return kp, loop


def delay_limited_margin(
    k: np.ndarray,
    line: LinePhasor,
    t0: float,
    Tv: RationalTF,
    Tf: RationalTF,
) -> tuple[float, float]:
    """Phase margins of the inductive-design P and Q droop loops.

    ``k`` uses the anti-diagonal inductive convention [[0, kq], [v2*kp, 0]].
    L_P = kp v2^2/(X s) * Tf and L_Q = kq v2/X * Tv, both with the transport
    delay e^{-s t0} applied as exact phase. A loop whose magnitude never
    reaches unity has unbounded margin and reports +inf.
    """
    if t0 < 0:
        raise ValueError("delay must be non-negative")
    k = np.asarray(k, dtype=float)
    kq = k[0, 1]
    kp = k[1, 0] / line.v2
    lp = (kp * line.v2**2 / line.X) * RationalTF([1.0], [0.0, 1.0]) * Tf
    lq = (kq * line.v2 / line.X) * Tv

    def margin(loop: RationalTF) -> float:
        try:
            return phase_margin(loop, delay=t0).margin_deg
        except NoCrossover:
            return math.inf

    return margin(lp), margin(lq)

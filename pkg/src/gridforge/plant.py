"""Averaged dq-frame model of a single-phase inverter behind an RLC filter.

The switch bridge is replaced by its cycle average m(t)*v_dc; feedback
linearization folds the rotating-frame coupling into the control inputs
(u_d, u_q) so the bare inductor-current dynamics are first order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

from .droop import PowerPair
from .numerics import RationalTF

__all__ = [
    "SaturationExceeded",
    "DQPair",
    "InverterParams",
    "InverterState",
    "ControlInput",
    "StateDerivative",
    "dq_transform",
    "inverse_dq_transform",
    "plant_derivatives",
    "plant_derivatives_modulated",
    "modulation_from_u",
    "u_from_modulation",
    "saturation_bounds",
    "clamp_control",
    "current_plant",
    "instantaneous_power",
]


class SaturationExceeded(UserWarning):
    """Requested modulation index magnitude exceeds 1 (clamp advised)."""


class DQPair(NamedTuple):
    d: float
    q: float

    def norm(self) -> float:
        return math.hypot(self.d, self.q)


@dataclass(frozen=True)
class InverterParams:
    """Output filter and DC-link parameters (SI units)."""

    C: float
    L_i: float
    R_i: float
    v_dc: float

    def __post_init__(self):
        for name in ("C", "L_i", "R_i", "v_dc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class InverterState:
    i_L: DQPair
    v_C: DQPair
    theta1: float
    pll_aux: float = 0.0

    def wrapped_theta1(self) -> float:
        """Angle wrapped to (-pi, pi] for reporting; integration stays unwrapped."""
        th = math.remainder(self.theta1, 2 * math.pi)
        return th if th != -math.pi else math.pi


@dataclass(frozen=True)
class ControlInput:
    u_d: float
    u_q: float
    theta_dot: float


class StateDerivative(NamedTuple):
    i_L_dot: DQPair
    v_C_dot: DQPair
    theta1_dot: float


def dq_transform(alpha: float, beta: float, theta: float) -> DQPair:
    """Stationary to rotating frame: d + jq = (alpha + j beta) e^{-j theta}."""
    c, sn = math.cos(theta), math.sin(theta)
    return DQPair(alpha * c + beta * sn, -alpha * sn + beta * c)


def inverse_dq_transform(d: float, q: float, theta: float) -> tuple[float, float]:
    """Rotating to stationary frame; exact inverse of dq_transform."""
    c, sn = math.cos(theta), math.sin(theta)
    return d * c - q * sn, d * sn + q * c


def plant_derivatives(
    x: InverterState, u: ControlInput, i_load: DQPair, p: InverterParams
) -> StateDerivative:
    """Averaged dynamics with the feedback-linearized inputs (u_d, u_q).

    The rotating-frame coupling on the inductor current lives inside the
    definition of u, so the current equations here are bare first-order lags;
    the capacitor keeps its frame-rotation coupling explicitly.
    """
    ild = (u.u_d - p.R_i * x.i_L.d) / p.L_i
    ilq = (u.u_q - p.R_i * x.i_L.q) / p.L_i
    vcd = (x.i_L.d - i_load.d + p.C * u.theta_dot * x.v_C.q) / p.C
    vcq = (x.i_L.q - i_load.q - p.C * u.theta_dot * x.v_C.d) / p.C
    return StateDerivative(DQPair(ild, ilq), DQPair(vcd, vcq), u.theta_dot)


def plant_derivatives_modulated(
    x: InverterState,
    m_d: float,
    m_q: float,
    theta_dot: float,
    i_load: DQPair,
    p: InverterParams,
) -> StateDerivative:
    """Averaged dynamics driven by the modulation pair (the raw bridge model)."""
    ild = (m_d * p.v_dc + p.L_i * theta_dot * x.i_L.q - x.v_C.d - p.R_i * x.i_L.d) / p.L_i
    ilq = (m_q * p.v_dc - p.L_i * theta_dot * x.i_L.d - x.v_C.q - p.R_i * x.i_L.q) / p.L_i
    vcd = (x.i_L.d - i_load.d + p.C * theta_dot * x.v_C.q) / p.C
    vcq = (x.i_L.q - i_load.q - p.C * theta_dot * x.v_C.d) / p.C
    return StateDerivative(DQPair(ild, ilq), DQPair(vcd, vcq), theta_dot)


def modulation_from_u(
    u: ControlInput, x: InverterState, p: InverterParams
) -> tuple[float, float]:
    """Recover the modulation pair that realizes (u_d, u_q) at this state."""
    m_d = (u.u_d - p.L_i * u.theta_dot * x.i_L.q + x.v_C.d) / p.v_dc
    m_q = (u.u_q + p.L_i * u.theta_dot * x.i_L.d + x.v_C.q) / p.v_dc
    if math.hypot(m_d, m_q) > 1.0:
        warnings.warn(
            f"modulation magnitude {math.hypot(m_d, m_q):.3f} exceeds 1",
            SaturationExceeded,
            stacklevel=2,
        )
    return m_d, m_q


def u_from_modulation(
    m_d: float, m_q: float, x: InverterState, theta_dot: float, p: InverterParams
) -> tuple[float, float]:
    """Inverse of modulation_from_u (exact algebraic round trip)."""
    u_d = m_d * p.v_dc + p.L_i * theta_dot * x.i_L.q - x.v_C.d
    u_q = m_q * p.v_dc - p.L_i * theta_dot * x.i_L.d - x.v_C.q
    return u_d, u_q


def saturation_bounds(
    x: InverterState, p: InverterParams, theta_dot: float
) -> tuple[float, float, float, float]:
    """(lo_d, hi_d, lo_q, hi_q) keeping |m_d|, |m_q| within 1.

    Follows the modulation algebra: the q-axis coupling term enters with the
    opposite sign of the d-axis one.
    """
    cd = p.L_i * theta_dot * x.i_L.q - x.v_C.d
    cq = -p.L_i * theta_dot * x.i_L.d - x.v_C.q
    return (-p.v_dc + cd, p.v_dc + cd, -p.v_dc + cq, p.v_dc + cq)


def clamp_control(u: ControlInput, bounds: tuple[float, float, float, float]) -> ControlInput:
    lo_d, hi_d, lo_q, hi_q = bounds
    return ControlInput(
        min(max(u.u_d, lo_d), hi_d), min(max(u.u_q, lo_q), hi_q), u.theta_dot
    )


def current_plant(p: InverterParams) -> RationalTF:
    """Decoupled inductor-current transfer function 1/(L_i s + R_i)."""
    return RationalTF([1.0], [p.R_i, p.L_i])


def instantaneous_power(v_C: DQPair, i_load: DQPair) -> PowerPair:
    """P = v_d i_d + v_q i_q, Q = v_q i_d - v_d i_q (amplitude convention).

    With the frame locked to the voltage phasor (v_q = 0) this reduces to the
    direct current-to-power mapping P = v_d i_d, Q = -v_d i_q.
    """
    return PowerPair(
        v_C.d * i_load.d + v_C.q * i_load.q,
        v_C.q * i_load.d - v_C.d * i_load.q,
    )

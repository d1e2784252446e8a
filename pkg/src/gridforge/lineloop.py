"""The transmission line as a 2x2 LTI plant, the controller set as a current
feedback law, sensitivity/complementary-sensitivity construction, steady-state
singular-value performance and grid-disturbance response."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .numerics import (
    RationalTF,
    StateSpace,
    TFMatrix2,
    apply_channel_integrator,
    singular_values,
)
from .plant import DQPair
from .synthesis import ControllerSet, ki_matrix

__all__ = [
    "AssumptionViolated",
    "SingularLoop",
    "LineModel",
    "LoopPair",
    "DCPerformance",
    "line_derivatives",
    "line_tf",
    "line_state_space",
    "feedback_law_matrix",
    "sensitivity_pair",
    "dc_performance",
    "grid_disturbance_response",
    "peak_gain",
    "sigma_sweep",
]


class AssumptionViolated(RuntimeError):
    """The in-band unity-voltage-loop simplification does not hold."""


class SingularLoop(ZeroDivisionError):
    """I + G Lambda K has no rational inverse."""


@dataclass(frozen=True)
class LineModel:
    """Series R-L line in the rotating frame, with derived resonance data."""

    R: float
    L: float
    omega0: float

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("line inductance must be positive")
        if self.R < 0:
            raise ValueError("line resistance must be non-negative")

    @classmethod
    def from_xr(cls, R: float, X: float, omega0: float) -> "LineModel":
        return cls(R=R, L=X / omega0, omega0=omega0)

    @property
    def X(self) -> float:
        return self.L * self.omega0

    @property
    def Zbar(self) -> float:
        return math.hypot(self.R, self.X)

    @property
    def wn(self) -> float:
        return self.Zbar / self.L

    @property
    def xi(self) -> float:
        return self.R / self.Zbar


def line_derivatives(i: DQPair, dv: float, vdelta: float, m: LineModel) -> DQPair:
    """L di/dt for the line driven by (amplitude difference, scaled angle)."""
    did = (-m.R * i.d + m.X * i.q + dv) / m.L
    diq = (-m.X * i.d - m.R * i.q + vdelta) / m.L
    return DQPair(did, diq)


def line_tf(m: LineModel) -> TFMatrix2:
    """2x2 transfer matrix of the line: equal diagonals, opposite anti-diagonals,
    resonant at wn = Zbar/L with damping xi = R/Zbar."""
    den = [m.wn * m.wn, 2.0 * m.xi * m.wn, 1.0]
    scale = 1.0 / (m.L * m.L)
    diag = RationalTF([scale * m.R, scale * m.L], den)
    anti = RationalTF([scale * m.X], den)
    return TFMatrix2(((diag, anti), (-1.0 * anti, diag)))


def line_state_space(m: LineModel) -> StateSpace:
    a = np.array([[-m.R, m.X], [-m.X, -m.R]]) / m.L
    b = np.eye(2) / m.L
    return StateSpace(a, b, np.eye(2), np.zeros((2, 2)))


def feedback_law_matrix(
    cs: ControllerSet,
    C: Optional[float] = None,
    check_band: Optional[float] = None,
    tol: float = 0.05,
) -> TFMatrix2:
    """Current feedback matrix [[1/Kv_d, -Keta_d], [H Keta_q, H/Kv_q]].

    This is the law the voltage/PLL architecture applies to the line once the
    voltage loops are treated as unity; passing ``C`` and ``check_band``
    verifies that simplification by sweeping |T - 1| up to the band and raises
    AssumptionViolated beyond ``tol``. Equals ki_matrix entrywise.
    """
    if check_band is not None:
        if C is None:
            raise ValueError("checking the unity-loop band requires the filter C")
        from .synthesis import voltage_loops

        loops = voltage_loops(cs, C)
        ws = np.logspace(-2, math.log10(check_band), 80)
        for axis in ("d", "q"):
            err = np.max(np.abs(loops[f"T_{axis}"].eval_unchecked(1j * ws) - 1.0))
            if err > tol:
                raise AssumptionViolated(
                    f"|T_{axis} - 1| reaches {err:.3g} below {check_band:.3g} rad/s"
                )
    one = RationalTF([1.0], [1.0])
    return TFMatrix2(
        (
            ((one / cs.Kv_d).cancel(), -1.0 * cs.Keta_d),
            ((cs.H_pll * cs.Keta_q).cancel(), (cs.H_pll / cs.Kv_q).cancel()),
        )
    )


class LoopPair(NamedTuple):
    S: TFMatrix2
    T: TFMatrix2


def sensitivity_pair(G: TFMatrix2, Ki: TFMatrix2) -> LoopPair:
    """S = (I + G Lambda Ki)^-1 and T = I - S as exact rational matrices."""
    lam_ki = apply_channel_integrator(Ki)
    m = TFMatrix2.identity() + (G @ lam_ki).cancel()
    try:
        s_mat = m.inverse().cancel()
    except (ZeroDivisionError, ValueError) as exc:
        raise SingularLoop(str(exc)) from exc
    t_mat = (TFMatrix2.identity() - s_mat).cancel()
    return LoopPair(s_mat, t_mat)


class DCPerformance(NamedTuple):
    smax: float
    smin: float
    tmax: float
    tmin: float


def dc_performance(gamma_d: float, line: LineModel) -> DCPerformance:
    """Steady-state singular values of S and T under the normalized gains.

    The line's DC matrix is orthogonal up to the 1/Zbar scale, so the
    similarity eigenvalues are simultaneously the singular values.
    """
    if gamma_d < 0:
        raise ValueError("scaling factor must be non-negative")
    zb = line.Zbar
    return DCPerformance(
        smax=zb / (gamma_d + zb), smin=0.0, tmax=1.0, tmin=gamma_d / (gamma_d + zb)
    )


def grid_disturbance_response(cs: ControllerSet, line: LineModel) -> TFMatrix2:
    """Closed-loop map from grid voltage/frequency deviations to line current.

    Computed as S G Lambda, which equals T Ki^-1; the inverse feedback matrix
    resonates at w_i = k z sqrt(gamma_d gamma_q) with damping xi_i.
    """
    g = line_tf(line)
    ki = ki_matrix(cs)
    pair = sensitivity_pair(g, ki)
    lam = apply_channel_integrator(TFMatrix2.identity())
    return ((pair.S @ g).cancel() @ lam).cancel()


def ki_inverse(cs: ControllerSet) -> TFMatrix2:
    """Closed form of the inverse feedback matrix (equivalent-disturbance
    injection gain): a resonant quadratic at w_i shared by all entries.

    Under a notch augmentation the scalar H_n multiplies through, cancelling
    the resonant pole pair against the band-stop zeros.
    """
    k, z = cs.k, cs.z
    bd, bq = cs.beta_d * z, cs.beta_q * z
    # det quadratic s^2 + (bd+bq) s + (bd bq + k^2 ad aq z^2) = s^2 + 2 xi_i w_i s + w_i^2
    den = [bd * bq + k * k * cs.alpha_d * cs.alpha_q * z * z, bd + bq, 1.0]
    front = RationalTF([k * z, k], den)
    m = TFMatrix2(
        (
            (
                front * RationalTF([bq, 1.0], [1.0]),
                front * (k * cs.alpha_d * z),
            ),
            (
                front * (-k * cs.alpha_q * z),
                front * RationalTF([bd, 1.0], [1.0]),
            ),
        )
    )
    if cs.notch is not None:
        m = TFMatrix2(
            tuple(tuple((e * cs.notch).cancel() for e in row) for row in m.m)
        )
    return m


def peak_gain(m: TFMatrix2, w_lo: float, w_hi: float, points: int = 800):
    """(w_peak, sigma_max_peak) of the largest singular value over a log sweep."""
    ws = np.logspace(math.log10(w_lo), math.log10(w_hi), points)
    best_w, best_s = ws[0], -1.0
    for w in ws:
        smax, _ = singular_values(m.eval_unchecked(1j * w))
        if smax > best_s:
            best_w, best_s = w, smax
    return float(best_w), float(best_s)


def sigma_sweep(pair: LoopPair, ws: np.ndarray) -> np.ndarray:
    """Structured rows (freq_rad_s, smax, smin, tmax, tmin) for reporting."""
    out = np.empty((len(ws), 5))
    for i, w in enumerate(ws):
        sv = pair.S.eval_unchecked(1j * w)
        tv = pair.T.eval_unchecked(1j * w)
        smax, smin = singular_values(sv)
        tmax, tmin = singular_values(tv)
        out[i] = (w, smax, smin, tmax, tmin)
    return out

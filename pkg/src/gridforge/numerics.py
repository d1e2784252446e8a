"""Transfer-function arithmetic, frequency response, margins and fixed-step integration.

Polynomials are stored as real coefficient tuples in ascending powers of s.
Denominators are normalized to a monic leading coefficient on construction so
repeated series compositions do not drift in scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "PoleEvaluation",
    "DegenerateLoop",
    "NoCrossover",
    "ImproperTF",
    "NonFinite",
    "RationalTF",
    "s",
    "tf_eval",
    "tf_series",
    "tf_feedback",
    "tf_sensitivity",
    "phase_margin",
    "PhaseMargin",
    "ComplexResponse",
    "frequency_response",
    "delay_phase",
    "TFMatrix2",
    "mimo_eval",
    "apply_channel_integrator",
    "singular_values",
    "StateSpace",
    "tf_to_ss",
    "realize_with_rolloff",
    "rk4_step",
    "simulate_lti",
    "bilinear_discretize",
    "DiscreteTF",
    "default_frequency_grid",
]

# Leading coefficients are dropped only when they contribute nothing below this
# frequency; keeps degree decisions scale-aware instead of comparing raw
# coefficient magnitudes (which differ by many orders for wide root spreads).
_DEGREE_BAND = 1e8
_DEGREE_RTOL = 1e-9

_CANCEL_TOL = 1e-9


class PoleEvaluation(ArithmeticError):
    """Transfer function evaluated at (or numerically too close to) a pole."""


class DegenerateLoop(ValueError):
    """1 + L is identically zero; the feedback interconnection is undefined."""


class NoCrossover(ValueError):
    """Loop magnitude never crosses unity on the sweep range."""


class ImproperTF(ValueError):
    """Operation requires a proper transfer function (num degree <= den degree)."""


class NonFinite(FloatingPointError):
    """State or output became non-finite during integration."""


def _trim_exact(c: np.ndarray) -> np.ndarray:
    """Drop exactly-zero leading (highest order) coefficients."""
    n = len(c)
    while n > 1 and c[n - 1] == 0.0:
        n -= 1
    return c[:n]


def _trim_scaled(c: np.ndarray) -> np.ndarray:
    """Drop leading coefficients that are negligible across the analysis band.

    A leading term c_n s^n is removed when |c_n| W^n is below _DEGREE_RTOL
    times the largest term magnitude at W = _DEGREE_BAND; such terms are
    roundoff ghosts from polynomial sums, not genuine degree.
    """
    c = _trim_exact(c)
    log_w = math.log(_DEGREE_BAND)
    log_rtol = math.log(_DEGREE_RTOL)
    while len(c) > 1:
        n = len(c) - 1
        with np.errstate(divide="ignore"):
            log_terms = np.log(np.abs(c)) + np.arange(n + 1) * log_w
        if log_terms[n] > log_rtol + log_terms.max():
            break
        c = c[:n]
    return c


def _as_poly(x) -> np.ndarray:
    c = np.atleast_1d(np.asarray(x, dtype=float))
    if c.ndim != 1 or len(c) == 0:
        raise ValueError("polynomial coefficients must be a non-empty 1-D sequence")
    return _trim_exact(c)


Scalar = Union[int, float]


class RationalTF:
    """SISO rational transfer function num(s)/den(s), coefficients ascending."""

    __slots__ = ("num", "den")

    def __init__(self, num: Sequence[float], den: Sequence[float]):
        n = _trim_scaled(_as_poly(num))
        d = _trim_scaled(_as_poly(den))
        if len(d) == 1 and d[0] == 0.0:
            raise ZeroDivisionError("denominator polynomial is zero")
        lead = d[-1]
        d = d / lead
        n = n / lead
        if len(n) == 1 and n[0] == 0.0:
            d = np.array([1.0])  # canonical zero
        if len(n) > len(d) + 1:
            raise ImproperTF(
                f"numerator degree {len(n) - 1} exceeds denominator degree "
                f"{len(d) - 1} by more than one"
            )
        self.num = tuple(float(v) for v in n)
        self.den = tuple(float(v) for v in d)

    # -- basic queries ----------------------------------------------------

    @property
    def num_degree(self) -> int:
        return len(self.num) - 1

    @property
    def den_degree(self) -> int:
        return len(self.den) - 1

    @property
    def is_proper(self) -> bool:
        return self.num_degree <= self.den_degree

    def is_zero(self) -> bool:
        return len(self.num) == 1 and self.num[0] == 0.0

    def poles(self) -> np.ndarray:
        return _poly_roots(self.den)

    def zeros(self) -> np.ndarray:
        return _poly_roots(self.num)

    def dc_gain(self) -> float:
        """Gain at s = 0; +-inf for a pole at the origin."""
        if self.den[0] == 0.0:
            if self.num[0] == 0.0:
                return self.cancel()(0.0).real
            return math.copysign(math.inf, self.num[0] / _first_nonzero(self.den))
        return self.num[0] / self.den[0]

    # -- evaluation --------------------------------------------------------

    def eval_unchecked(self, sv):
        """Evaluate at complex s (scalar or array) without pole detection."""
        return npoly.polyval(sv, self.num) / npoly.polyval(sv, self.den)

    def __call__(self, sv: complex) -> complex:
        dv = npoly.polyval(sv, self.den)
        scale = sum(abs(c) * abs(sv) ** k for k, c in enumerate(self.den))
        if abs(dv) <= 1e-12 * max(scale, 1e-300):
            raise PoleEvaluation(f"denominator vanishes at s={sv!r}")
        return complex(npoly.polyval(sv, self.num) / dv)

    # -- arithmetic (no automatic cancellation) -----------------------------

    def _coerce(self, other):
        if isinstance(other, RationalTF):
            return other
        if isinstance(other, (int, float)):
            return RationalTF([float(other)], [1.0])
        return NotImplemented

    def __mul__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return RationalTF(npoly.polymul(self.num, o.num), npoly.polymul(self.den, o.den))

    __rmul__ = __mul__

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        num = npoly.polyadd(
            npoly.polymul(self.num, o.den), npoly.polymul(o.num, self.den)
        )
        return RationalTF(num, npoly.polymul(self.den, o.den))

    __radd__ = __add__

    def __neg__(self):
        return RationalTF([-c for c in self.num], self.den)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self + (-o)

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return o * self.reciprocal()

    def reciprocal(self) -> "RationalTF":
        if self.is_zero():
            raise ZeroDivisionError("reciprocal of the zero transfer function")
        return RationalTF(self.den, self.num)

    def __repr__(self):
        return f"RationalTF(num={list(self.num)}, den={list(self.den)})"

    # -- structure ----------------------------------------------------------

    def cancel(self, tol: float = _CANCEL_TOL) -> "RationalTF":
        """Remove common num/den roots within relative tolerance ``tol``.

        Cancellation is never silent elsewhere in this module: designs rely on
        exact pole/zero cancellations and hiding a mismatch would hide a
        design error. The root-matched result is verified against the original
        at probe points and discarded if reconstruction lost accuracy.
        """
        if self.is_zero():
            return self
        num = np.asarray(self.num)
        den = np.asarray(self.den)
        # common roots at the origin cancel exactly by coefficient shifts
        kn = _origin_multiplicity(num)
        kd = _origin_multiplicity(den)
        k = min(kn, kd)
        if k:
            num = num[k:]
            den = den[k:]
        base = RationalTF(num, den)
        rn = list(_poly_roots(num))
        rd = list(_poly_roots(den))
        keep_n = []
        cancelled = 0
        for r in rn:
            hit = None
            for j, q in enumerate(rd):
                if abs(r - q) <= tol * max(1.0, abs(r), abs(q)):
                    hit = j
                    break
            if hit is None:
                keep_n.append(r)
            else:
                rd.pop(hit)
                cancelled += 1
        if not cancelled:
            return base
        try:
            out = RationalTF(
                _poly_from_roots(keep_n, num[-1]), _poly_from_roots(rd, den[-1])
            )
        except (ValueError, ImproperTF):
            return base
        return out if _cancel_faithful(base, out) else base

    def feedback(self) -> "RationalTF":
        """Closed loop L/(1+L) of a unity negative-feedback interconnection."""
        closed_den = npoly.polyadd(self.den, self.num)
        if len(_trim_scaled(np.asarray(closed_den))) == 1 and closed_den[0] == 0.0:
            raise DegenerateLoop("1 + L is identically zero")
        return RationalTF(self.num, closed_den)

    def sensitivity(self) -> "RationalTF":
        """Sensitivity 1/(1+L) companion of :meth:`feedback`."""
        closed_den = npoly.polyadd(self.den, self.num)
        if len(_trim_scaled(np.asarray(closed_den))) == 1 and closed_den[0] == 0.0:
            raise DegenerateLoop("1 + L is identically zero")
        return RationalTF(self.den, closed_den)

    def to_state_space(self) -> "StateSpace":
        return tf_to_ss(self)


def _first_nonzero(c) -> float:
    for v in c:
        if v != 0.0:
            return v
    return 0.0


def _origin_multiplicity(c: np.ndarray) -> int:
    k = 0
    while k < len(c) - 1 and c[k] == 0.0:
        k += 1
    return k


def _poly_roots(c) -> np.ndarray:
    c = _trim_scaled(np.asarray(c, dtype=float))
    if len(c) == 1:
        return np.array([], dtype=complex)
    return np.roots(c[::-1])


def _poly_from_roots(roots, lead: float) -> np.ndarray:
    if len(roots) == 0:
        return np.array([lead])
    c = np.poly(np.asarray(roots, dtype=complex))  # descending, monic
    c = c[::-1]
    if np.abs(c.imag).max() > 1e-6 * max(np.abs(c.real).max(), 1e-300):
        raise ValueError("root set does not produce a real polynomial")
    return c.real * lead


def _cancel_faithful(a: "RationalTF", b: "RationalTF", rtol: float = 1e-10) -> bool:
    """Probe whether b reproduces a closely enough to replace it."""
    den = np.asarray(a.den)
    scale = (abs(den[0]) / abs(den[-1])) ** (1.0 / max(len(den) - 1, 1))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    probes = [scale * complex(0.31, 0.87), scale * complex(1.7, -0.44), 3.7 * scale]
    if a.den[0] != 0.0:
        probes.append(0.0)
    for sv in probes:
        va = a.eval_unchecked(sv)
        vb = b.eval_unchecked(sv)
        if not (np.isfinite(va.real) and np.isfinite(vb.real)):
            continue
        if abs(va - vb) > rtol * max(abs(va), abs(vb), 1e-300):
            return False
    return True


#: The Laplace variable, for expressive construction: ``(3.3e-3 * s + 0.2) / (1e-3 * s)``.
s = RationalTF([0.0, 1.0], [1.0])


# -- spec-level functional aliases ------------------------------------------


def tf_eval(tf: RationalTF, sv: complex) -> complex:
    """num(s)/den(s) via Horner evaluation; raises PoleEvaluation near poles."""
    return tf(sv)


def tf_series(a: RationalTF, b: RationalTF) -> RationalTF:
    """Polynomial product; common roots are kept (cancel() is explicit)."""
    return a * b


def tf_feedback(loop: RationalTF) -> RationalTF:
    return loop.feedback()


def tf_sensitivity(loop: RationalTF) -> RationalTF:
    return loop.sensitivity()


def default_frequency_grid(lo: float = 1e-2, hi: float = 1e7, points: int = 400) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), points)


class PhaseMargin(NamedTuple):
    margin_deg: float
    crossover_rad_s: float


@dataclass(frozen=True)
class ComplexResponse:
    """One sample of a frequency sweep (SISO complex or 2x2 matrix value)."""

    frequency: float
    value: complex

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("sweep frequencies must be positive")


def frequency_response(tf: "RationalTF", ws=None) -> list[ComplexResponse]:
    """Sweep samples of tf(jw) over ``ws`` (default grid when omitted)."""
    if ws is None:
        ws = default_frequency_grid()
    return [ComplexResponse(w, complex(tf.eval_unchecked(1j * w))) for w in ws]


def delay_phase(loop: RationalTF, t0: float, w: float) -> float:
    """Phase (degrees) of loop(jw) e^{-jw t0}: exact transport-delay lag.

    The delay is applied as a phase subtraction only, never as a rational
    approximation, so magnitudes (and crossovers) are untouched.
    """
    if t0 < 0:
        raise ValueError("delay must be non-negative")
    ph = math.degrees(np.angle(loop.eval_unchecked(1j * w)))
    return ph - math.degrees(w * t0)


def _low_freq_anchor(loop: RationalTF) -> float:
    """Asymptotic phase (deg) of loop(jw) as w -> 0+."""
    r = _origin_multiplicity(np.asarray(loop.den)) - _origin_multiplicity(
        np.asarray(loop.num)
    )
    k0 = _first_nonzero(loop.num) / _first_nonzero(loop.den)
    return -90.0 * r + (-180.0 if k0 < 0 else 0.0)


def phase_margin(
    loop: RationalTF,
    delay: float = 0.0,
    w_lo: float = 1e-2,
    w_hi: float = 1e7,
    points: int = 400,
) -> PhaseMargin:
    """Worst-case phase margin over all unity-gain crossovers on [w_lo, w_hi].

    Crossovers are bracketed on a log grid and bisected to 1e-6 relative
    accuracy; the margin is 180 deg plus the unwrapped loop phase there (with
    exact delay phase subtracted when ``delay`` > 0).
    """
    roots = np.concatenate([loop.poles(), loop.zeros()])
    finite = np.abs(roots[np.abs(roots) > 0.0]) if len(roots) else np.array([])
    if len(finite) and finite.min() < 10.0 * w_lo:
        w_lo = finite.min() / 100.0
    grid = default_frequency_grid(w_lo, w_hi, points)
    vals = loop.eval_unchecked(1j * grid)
    mag = np.abs(vals)
    ph = np.degrees(np.unwrap(np.angle(vals)))
    ph += 360.0 * round((_low_freq_anchor(loop) - ph[0]) / 360.0)

    logmag = np.log(np.maximum(mag, 1e-300))
    crossings = []
    for i in range(len(grid) - 1):
        if logmag[i] == 0.0:
            crossings.append(grid[i])
        elif logmag[i] * logmag[i + 1] < 0.0:
            lo, hi = grid[i], grid[i + 1]
            flo = logmag[i]
            while (hi - lo) / lo > 1e-6:
                mid = math.sqrt(lo * hi)
                fm = math.log(max(abs(loop.eval_unchecked(1j * mid)), 1e-300))
                if flo * fm <= 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            crossings.append(math.sqrt(lo * hi))
    if not crossings:
        raise NoCrossover(
            f"|L(jw)| never crosses unity on [{w_lo:g}, {w_hi:g}] rad/s"
        )

    best = None
    for wc in crossings:
        idx = int(np.searchsorted(grid, wc))
        idx = min(max(idx, 0), len(grid) - 1)
        raw = math.degrees(np.angle(loop.eval_unchecked(1j * wc)))
        # reconcile the principal angle with the unwrapped sweep
        raw += 360.0 * round((ph[idx] - raw) / 360.0)
        margin = 180.0 + raw - math.degrees(wc * delay)
        if best is None or margin < best.margin_deg:
            best = PhaseMargin(margin, wc)
    return best


# -- 2x2 transfer function matrices ------------------------------------------


def _as_tf(x) -> RationalTF:
    if isinstance(x, RationalTF):
        return x
    return RationalTF([float(x)], [1.0])


class TFMatrix2:
    """2x2 matrix of RationalTF entries for MIMO line/loop analysis."""

    __slots__ = ("m",)

    def __init__(self, entries):
        rows = tuple(tuple(_as_tf(e) for e in row) for row in entries)
        if len(rows) != 2 or any(len(r) != 2 for r in rows):
            raise ValueError("TFMatrix2 requires a 2x2 grid of entries")
        self.m = rows

    def __getitem__(self, ij):
        i, j = ij
        return self.m[i][j]

    @classmethod
    def identity(cls) -> "TFMatrix2":
        one = RationalTF([1.0], [1.0])
        zero = RationalTF([0.0], [1.0])
        return cls(((one, zero), (zero, one)))

    @classmethod
    def zeros(cls) -> "TFMatrix2":
        zero = RationalTF([0.0], [1.0])
        return cls(((zero, zero), (zero, zero)))

    @classmethod
    def from_constant(cls, a) -> "TFMatrix2":
        a = np.asarray(a, dtype=float)
        return cls(((a[0, 0], a[0, 1]), (a[1, 0], a[1, 1])))

    def eval(self, sv: complex) -> np.ndarray:
        return np.array(
            [[self.m[0][0](sv), self.m[0][1](sv)], [self.m[1][0](sv), self.m[1][1](sv)]],
            dtype=complex,
        )

    def eval_unchecked(self, sv: complex) -> np.ndarray:
        return np.array(
            [
                [self.m[0][0].eval_unchecked(sv), self.m[0][1].eval_unchecked(sv)],
                [self.m[1][0].eval_unchecked(sv), self.m[1][1].eval_unchecked(sv)],
            ],
            dtype=complex,
        )

    def __matmul__(self, other: "TFMatrix2") -> "TFMatrix2":
        a, b = self.m, other.m
        return TFMatrix2(
            (
                (a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]),
                (a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]),
            )
        )

    def __mul__(self, other) -> "TFMatrix2":
        g = _as_tf(other)
        return TFMatrix2(tuple(tuple(e * g for e in row) for row in self.m))

    __rmul__ = __mul__

    def __add__(self, other: "TFMatrix2") -> "TFMatrix2":
        return TFMatrix2(
            tuple(
                tuple(self.m[i][j] + other.m[i][j] for j in range(2)) for i in range(2)
            )
        )

    def __sub__(self, other: "TFMatrix2") -> "TFMatrix2":
        return TFMatrix2(
            tuple(
                tuple(self.m[i][j] - other.m[i][j] for j in range(2)) for i in range(2)
            )
        )

    def transpose(self) -> "TFMatrix2":
        return TFMatrix2(
            ((self.m[0][0], self.m[1][0]), (self.m[0][1], self.m[1][1]))
        )

    def det(self) -> RationalTF:
        return self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]

    def cancel(self, tol: float = _CANCEL_TOL) -> "TFMatrix2":
        return TFMatrix2(tuple(tuple(e.cancel(tol) for e in row) for row in self.m))

    def inverse(self, tol: float = _CANCEL_TOL) -> "TFMatrix2":
        """Adjugate/determinant inverse over the rationals.

        Entries are first brought over a common denominator so the whole
        computation is plain polynomial arithmetic (no root extraction); the
        final explicit cancellation is verified and reverted entrywise if
        reconstruction would lose accuracy.
        """
        uniq: list[tuple] = []
        for i in range(2):
            for j in range(2):
                d = self.m[i][j].den
                if d not in uniq:
                    uniq.append(d)
        d_all = np.array([1.0])
        for d in uniq:
            d_all = npoly.polymul(d_all, d)
        n = [[None, None], [None, None]]
        for i in range(2):
            for j in range(2):
                scaled = np.atleast_1d(np.asarray(self.m[i][j].num))
                own = self.m[i][j].den
                for d in uniq:
                    if d != own:
                        scaled = npoly.polymul(scaled, d)
                n[i][j] = np.atleast_1d(scaled)
        diag = npoly.polymul(n[0][0], n[1][1])
        anti = npoly.polymul(n[0][1], n[1][0])
        det_n = np.atleast_1d(npoly.polysub(diag, anti))
        # structural cancellations (e.g. the rank-1 integrator residue) must
        # produce exact zero coefficients, not float residue: snap against the
        # largest magnitude the two products could have contributed
        bound = np.zeros(len(det_n))
        mag = np.atleast_1d(
            npoly.polyadd(
                np.convolve(np.abs(n[0][0]), np.abs(n[1][1])),
                np.convolve(np.abs(n[0][1]), np.abs(n[1][0])),
            )
        )
        bound[: len(mag)] = mag[: len(bound)]
        det_n = np.where(np.abs(det_n) <= 1e-11 * bound, 0.0, det_n)
        det_n = _trim_scaled(det_n)
        if len(det_n) == 1 and det_n[0] == 0.0:
            raise ZeroDivisionError("matrix of transfer functions is singular")
        adj = ((n[1][1], -np.asarray(n[0][1])), (-np.asarray(n[1][0]), n[0][0]))
        out = []
        for i in range(2):
            row = []
            for j in range(2):
                num = npoly.polymul(adj[i][j], d_all)
                row.append(RationalTF(num, det_n).cancel(tol))
            out.append(tuple(row))
        return TFMatrix2(tuple(out))


def mimo_eval(m: TFMatrix2, sv: complex) -> np.ndarray:
    """Entrywise tf_eval; PoleEvaluation propagates from any entry."""
    return m.eval(sv)


def apply_channel_integrator(m: TFMatrix2, channel: int = 1) -> TFMatrix2:
    """Left-multiply by diag(1, 1/s) (integrator on ``channel``), structurally.

    The integrator is attached to a whole row at the point of use, so the
    plain matrix stays a constant/finite object wherever DC reasoning needs it.
    """
    integ = RationalTF([1.0], [0.0, 1.0])
    rows = [list(r) for r in m.m]
    rows[channel] = [e * integ for e in rows[channel]]
    return TFMatrix2(rows)


def singular_values(m) -> tuple[float, float]:
    """(sigma_max, sigma_min) from the eigenvalues of m^H m.

    The small value is recovered through sigma_max * sigma_min = |det m|
    (exact for 2x2), which avoids the sqrt-of-noise floor the Gram eigenvalue
    would impose on singular matrices.
    """
    a = np.asarray(m, dtype=complex)
    if a.shape != (2, 2) or not np.all(np.isfinite(a.view(float))):
        raise ValueError("expected a finite 2x2 matrix")
    ev = np.linalg.eigvalsh(a.conj().T @ a)
    smax = float(math.sqrt(max(ev[1].real, 0.0)))
    if smax == 0.0:
        return 0.0, 0.0
    smin = abs(np.linalg.det(a)) / smax
    return smax, float(min(smin, smax))


# -- state space and integration ----------------------------------------------


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ValueError("inconsistent state-space dimensions")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError("inconsistent feedthrough dimensions")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def deriv(self, x, u):
        return self.A @ x + self.B @ u

    def output(self, x, u):
        return self.C @ x + self.D @ u

    def freq_response(self, sv: complex) -> np.ndarray:
        n = self.n_states
        return self.C @ np.linalg.solve(sv * np.eye(n) - self.A, self.B) + self.D


def tf_to_ss(tf: RationalTF) -> StateSpace:
    """Controllable canonical realization of a proper transfer function."""
    if not tf.is_proper:
        raise ImproperTF(
            "cannot realize an improper transfer function; add an explicit "
            "roll-off pole first (see realize_with_rolloff)"
        )
    a = np.asarray(tf.den)  # monic already
    n = len(a) - 1
    b = np.zeros(n + 1)
    b[: len(tf.num)] = tf.num
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[b[0]]])
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -a[:n]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    D = b[n]
    C = (b[:n] - D * a[:n]).reshape(1, n)
    return StateSpace(A, B, C, [[D]])


def realize_with_rolloff(tf: RationalTF, wc: float) -> tuple[StateSpace, RationalTF]:
    """Realize an improper compensator with a first-order pole at 100*wc.

    Returns the realization and the rolled-off rational it implements; callers
    record the substitution in their design report.
    """
    if tf.is_proper:
        return tf_to_ss(tf), tf
    p = 100.0 * wc
    rolled = tf * RationalTF([p], [p, 1.0])
    if not rolled.is_proper:
        rolled = rolled * RationalTF([p], [p, 1.0])
    return tf_to_ss(rolled), rolled


def rk4_step(model, x, u, dt: float):
    """Classical 4th-order Runge-Kutta update with input held over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if isinstance(model, StateSpace):
        u = np.asarray(u, dtype=float)
        f: Callable = lambda xx: model.A @ xx + model.B @ u
    else:
        f = lambda xx: np.asarray(model(xx, u), dtype=float)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(xn)):
        raise NonFinite("state became non-finite during RK4 step")
    return xn


def simulate_lti(ss: StateSpace, u_fn, t_end: float, dt: float):
    """Fixed-step RK4 run of a state-space model; u_fn(t) gives the input."""
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    x = np.zeros(ss.n_states)
    ys = np.empty((n + 1, ss.C.shape[0]))
    for k in range(n + 1):
        u = np.atleast_1d(np.asarray(u_fn(t[k]), dtype=float))
        ys[k] = ss.output(x, u)
        if k < n:
            # ZOH on the input over the step
            model = lambda xx, uu: ss.A @ xx + ss.B @ uu
            x = rk4_step(model, x, u, dt)
    return t, ys


# -- discretization -----------------------------------------------------------


def bilinear_discretize(tf: RationalTF, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Tustin discretization; returns (b, a) ascending in z^-1 with a[0] = 1.

    The bilinear map preserves DC gain and maps poles at the origin to z = 1,
    so integrators and steady-state droop slopes survive discretization exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not tf.is_proper:
        raise ImproperTF("bilinear discretization requires a proper transfer function")
    n = tf.den_degree
    c = 2.0 / dt
    minus = np.array([1.0, -1.0])  # (1 - z^-1)
    plus = np.array([1.0, 1.0])  # (1 + z^-1)

    def substitute(coeffs):
        out = np.zeros(n + 1)
        for k, ck in enumerate(coeffs):
            if ck == 0.0:
                continue
            term = np.array([ck * c**k])
            for _ in range(k):
                term = np.convolve(term, minus)
            for _ in range(n - k):
                term = np.convolve(term, plus)
            out[: len(term)] += term
        return out

    b = substitute(tf.num)
    a = substitute(tf.den)
    return b / a[0], a / a[0]


class DiscreteTF:
    """Direct-form-II-transposed stateful filter for a discretized compensator."""

    __slots__ = ("b", "a", "state")

    def __init__(self, b, a):
        self.b = np.asarray(b, dtype=float)
        self.a = np.asarray(a, dtype=float)
        if self.a[0] != 1.0:
            self.b = self.b / self.a[0]
            self.a = self.a / self.a[0]
        self.state = np.zeros(max(len(self.a), len(self.b)) - 1)

    @classmethod
    def from_tf(cls, tf: RationalTF, dt: float) -> "DiscreteTF":
        return cls(*bilinear_discretize(tf, dt))

    def step(self, u: float) -> float:
        b, a, z = self.b, self.a, self.state
        y = b[0] * u + (z[0] if len(z) else 0.0)
        for j in range(1, len(z)):
            z[j - 1] = (b[j] if j < len(b) else 0.0) * u - a[j] * y + z[j]
        if len(z):
            j = len(z)
            z[-1] = (b[j] if j < len(b) else 0.0) * u - (a[j] if j < len(a) else 0.0) * y
        return y

    def reset(self):
        self.state[:] = 0.0

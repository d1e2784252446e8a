"""Fixed-step time-domain engine for N parallel inverters at a common PCC.

Plant states integrate with RK4 at dt in each inverter's own rotating frame;
controllers run bilinear-discretized at the control period and hold their
modulation commands over the plant substeps. The PCC couples everything in the
stationary frame: algebraic Ohm node for resistive loads, a small parasitic
bus capacitance for current sinks, or a stiff grid phasor when the breaker is
closed. Direct-injection mode bypasses the line and forces the load current in
the single inverter's frame (the disturbance-rejection testbench).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .numerics import NonFinite, bilinear_discretize
from .scenario import Scenario
from .timeseries import TimeSeries

try:
    from numba import njit

    NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


log = logging.getLogger(__name__)

__all__ = ["Simulator", "SimReport", "run_scenario", "pcc_solve", "breaker_may_close"]

# continuous states per inverter: iL_d, iL_q, vC_d, vC_q, theta1, iline_d, iline_q
NS = 7
# filter banks: Kc_d, Kc_q, Kv_d, Kv_q, Keta_d, Keta_q, H_pll
NBANK = 7
_KC_D, _KC_Q, _KV_D, _KV_Q, _KETA_D, _KETA_Q, _HPLL = range(NBANK)

_LOAD_RES, _LOAD_SINK, _LOAD_DIRECT = 0, 1, 2

# integer registers
_R_KSTEP, _R_LOADIDX, _R_BRKIDX, _R_CLOSED, _R_PENDING, _R_DEFER, _R_STATUS, _R_NREC = range(8)
NIREG = 8
# float registers
_F_PHPREV, _F_FPCC, _F_PHVALID = range(3)
NFREG = 3


def _wrap_pi(x: float) -> float:
    return math.remainder(x, 2.0 * math.pi)


def pcc_solve(line_currents_ab, load_kind: str, load_value: float,
              grid=None, breaker_closed: bool = False, t: float = 0.0):
    """Stationary-frame PCC voltage for the given injections.

    ``line_currents_ab`` is an iterable of (alpha, beta) line-current pairs.
    Resistive islanded operation is the algebraic Ohm node; with the breaker
    closed the stiff grid phasor wins regardless of injections.
    """
    ia = sum(c[0] for c in line_currents_ab)
    ib = sum(c[1] for c in line_currents_ab)
    if breaker_closed:
        if grid is None:
            raise ValueError("breaker closed with no grid present")
        ph = grid.omega * t + grid.phase0
        return grid.amplitude * math.cos(ph), grid.amplitude * math.sin(ph)
    if load_kind == "resistance":
        return load_value * ia, load_value * ib
    raise ValueError(f"no algebraic PCC solution for load kind {load_kind!r}")


def breaker_may_close(pcc_phase: float, grid_phase: float, tol: float = 0.02) -> bool:
    """Phase-matching close condition; amplitude deliberately unchecked."""
    return abs(_wrap_pi(pcc_phase - grid_phase)) < tol


@njit(cache=True)
def _wrap(x):
    y = x % (2.0 * math.pi)
    if y > math.pi:
        y -= 2.0 * math.pi
    return y


@njit(cache=True)
def _filt(b, a, state, order, u):
    """One step of a direct-form-II-transposed filter bank row."""
    if order == 0:
        return b[0] * u
    y = b[0] * u + state[0]
    for j in range(1, order):
        state[j - 1] = b[j] * u - a[j] * y + state[j]
    state[order - 1] = b[order] * u - a[order] * y
    return y


@njit(cache=True)
def _pcc_ab(x, n_inv, t, load_kind, load_v1, has_grid, closed, vg, wg, phig):
    """Stationary-frame PCC voltage from the current continuous state."""
    if load_kind == _LOAD_DIRECT:
        base = 0
        th = x[base + 4]
        vcd, vcq = x[base + 2], x[base + 3]
        return vcd * math.cos(th) - vcq * math.sin(th), vcd * math.sin(th) + vcq * math.cos(th)
    if has_grid and closed:
        ph = wg * t + phig
        return vg * math.cos(ph), vg * math.sin(ph)
    if load_kind == _LOAD_SINK:
        return x[n_inv * NS], x[n_inv * NS + 1]
    ia = 0.0
    ib = 0.0
    for i in range(n_inv):
        base = i * NS
        th = x[base + 4]
        c = math.cos(th)
        s = math.sin(th)
        ia += x[base + 5] * c - x[base + 6] * s
        ib += x[base + 5] * s + x[base + 6] * c
    return load_v1 * ia, load_v1 * ib


@njit(cache=True)
def _deriv(x, dx, n_inv, t, C, Li, Ri, vdc, Rl, Ll, md, mq, w1,
           load_kind, load_v1, load_v2, has_grid, closed, vg, wg, phig, cbus):
    va, vb = _pcc_ab(x, n_inv, t, load_kind, load_v1, has_grid, closed, vg, wg, phig)
    if load_kind == _LOAD_SINK:
        ia = 0.0
        ib = 0.0
        for i in range(n_inv):
            base = i * NS
            th = x[base + 4]
            c = math.cos(th)
            s = math.sin(th)
            ia += x[base + 5] * c - x[base + 6] * s
            ib += x[base + 5] * s + x[base + 6] * c
        if has_grid and closed:
            dx[n_inv * NS] = 0.0
            dx[n_inv * NS + 1] = 0.0
        else:
            vmag = math.hypot(va, vb)
            isa = 0.0
            isb = 0.0
            if vmag > 1e-9:
                isa = load_v1 * va / vmag
                isb = load_v1 * vb / vmag
            dx[n_inv * NS] = (ia - isa) / cbus
            dx[n_inv * NS + 1] = (ib - isb) / cbus
    for i in range(n_inv):
        base = i * NS
        ild = x[base + 0]
        ilq = x[base + 1]
        vcd = x[base + 2]
        vcq = x[base + 3]
        th = x[base + 4]
        w = w1[i]
        if load_kind == _LOAD_DIRECT:
            io_d = load_v1
            io_q = load_v2
        else:
            io_d = x[base + 5]
            io_q = x[base + 6]
        dx[base + 0] = (md[i] * vdc[i] + Li[i] * w * ilq - vcd - Ri[i] * ild) / Li[i]
        dx[base + 1] = (mq[i] * vdc[i] - Li[i] * w * ild - vcq - Ri[i] * ilq) / Li[i]
        dx[base + 2] = (ild - io_d + C[i] * w * vcq) / C[i]
        dx[base + 3] = (ilq - io_q - C[i] * w * vcd) / C[i]
        dx[base + 4] = w
        if load_kind == _LOAD_DIRECT:
            dx[base + 5] = 0.0
            dx[base + 6] = 0.0
        else:
            c = math.cos(th)
            s = math.sin(th)
            vpd = va * c + vb * s
            vpq = -va * s + vb * c
            dx[base + 5] = (vcd - vpd + Ll[i] * w * x[base + 6] - Rl[i] * x[base + 5]) / Ll[i]
            dx[base + 6] = (vcq - vpq - Ll[i] * w * x[base + 5] - Rl[i] * x[base + 6]) / Ll[i]


@njit(cache=True)
def _run(
    n_steps, n_inv, n_sub, dt, ts, w0,
    C, Li, Ri, vdc, Rl, Ll, v0, i0d, i0q, v2nom,
    fb, fa, order, fstate,
    x, uv_prev, held,
    load_kind, load_t, load_v1, load_v2,
    has_grid, vg, wg, phig, sync_tol, brk_t, brk_close, cbus,
    rec_every, rec, rec_cols_per_inv, sat_count, brk_log, ireg, freg,
    k1, k2, k3, k4, xt,
):
    n_x = n_inv * NS + 2
    for _step in range(n_steps):
        k = ireg[_R_KSTEP]
        t = k * ts
        # schedule pointers
        while ireg[_R_LOADIDX] + 1 < len(load_t) and load_t[ireg[_R_LOADIDX] + 1] <= t + 1e-12:
            ireg[_R_LOADIDX] += 1
        lv1 = load_v1[ireg[_R_LOADIDX]]
        lv2 = load_v2[ireg[_R_LOADIDX]]
        if has_grid:
            while ireg[_R_BRKIDX] < len(brk_t) and brk_t[ireg[_R_BRKIDX]] <= t + 1e-12:
                if brk_close[ireg[_R_BRKIDX]] == 1:
                    if ireg[_R_CLOSED] == 0:
                        ireg[_R_PENDING] = 1
                else:
                    ireg[_R_CLOSED] = 0
                    ireg[_R_PENDING] = 0
                ireg[_R_BRKIDX] += 1
            if ireg[_R_PENDING] == 1 and ireg[_R_CLOSED] == 0:
                va, vb = _pcc_ab(x, n_inv, t, load_kind, lv1, has_grid, 0, vg, wg, phig)
                if math.hypot(va, vb) > 0.05 * vg:
                    dph = _wrap(math.atan2(vb, va) - (wg * t + phig))
                    if abs(dph) < sync_tol:
                        ireg[_R_CLOSED] = 1
                        ireg[_R_PENDING] = 0
                        brk_log[0] = t
                        brk_log[1] += 1.0
                    else:
                        ireg[_R_DEFER] += 1

        closed = ireg[_R_CLOSED]

        # controller update at the control rate
        for i in range(n_inv):
            base = i * NS
            ild = x[base + 0]
            ilq = x[base + 1]
            vcd = x[base + 2]
            vcq = x[base + 3]
            w1 = w0 + _filt(fb[i, _HPLL], fa[i, _HPLL], fstate[i, _HPLL], order[i, _HPLL], vcq) / v2nom[i]
            etad = _filt(fb[i, _KETA_D], fa[i, _KETA_D], fstate[i, _KETA_D], order[i, _KETA_D], uv_prev[i, 1])
            etaq = _filt(fb[i, _KETA_Q], fa[i, _KETA_Q], fstate[i, _KETA_Q], order[i, _KETA_Q], -uv_prev[i, 0])
            uvd = _filt(fb[i, _KV_D], fa[i, _KV_D], fstate[i, _KV_D], order[i, _KV_D], v0[i] + etad - vcd)
            uvq = _filt(fb[i, _KV_Q], fa[i, _KV_Q], fstate[i, _KV_Q], order[i, _KV_Q], etaq - vcq)
            uv_prev[i, 0] = uvd
            uv_prev[i, 1] = uvq
            ird = uvd + i0d[i] - C[i] * w1 * vcq
            irq = uvq + i0q[i] + C[i] * w1 * vcd
            uid = _filt(fb[i, _KC_D], fa[i, _KC_D], fstate[i, _KC_D], order[i, _KC_D], ird - ild)
            uiq = _filt(fb[i, _KC_Q], fa[i, _KC_Q], fstate[i, _KC_Q], order[i, _KC_Q], irq - ilq)
            md = (uid - Li[i] * w1 * ilq + vcd) / vdc[i]
            mq = (uiq + Li[i] * w1 * ild + vcq) / vdc[i]
            mag = math.hypot(md, mq)
            if mag > 1.0:
                md /= mag
                mq /= mag
                sat_count[i] += 1
            held[i, 0] = md
            held[i, 1] = mq
            held[i, 2] = w1

        # PCC phase tracking for the frequency column
        va, vb = _pcc_ab(x, n_inv, t, load_kind, lv1, has_grid, closed, vg, wg, phig)
        if math.hypot(va, vb) > 0.01 * v2nom[0]:
            ph = math.atan2(vb, va)
            if freg[_F_PHVALID] > 0.5:
                dph = _wrap(ph - freg[_F_PHPREV])
                freg[_F_FPCC] = dph / (2.0 * math.pi * ts)
            freg[_F_PHPREV] = ph
            freg[_F_PHVALID] = 1.0
        else:
            freg[_F_PHVALID] = 0.0
            freg[_F_FPCC] = w0 / (2.0 * math.pi)

        # record the sample at the control instant, before the substeps
        if k % rec_every == 0 and ireg[_R_NREC] < rec.shape[0]:
            r = ireg[_R_NREC]
            rec[r, 0] = t
            for i in range(n_inv):
                base = i * NS
                vcd = x[base + 2]
                vcq = x[base + 3]
                if load_kind == _LOAD_DIRECT:
                    io_d = lv1
                    io_q = lv2
                else:
                    io_d = x[base + 5]
                    io_q = x[base + 6]
                c0 = 1 + i * rec_cols_per_inv
                rec[r, c0 + 0] = vcd * io_d + vcq * io_q
                rec[r, c0 + 1] = vcq * io_d - vcd * io_q
                rec[r, c0 + 2] = vcd
                rec[r, c0 + 3] = vcq
                rec[r, c0 + 4] = held[i, 2]
                rec[r, c0 + 5] = io_d
                rec[r, c0 + 6] = io_q
                rec[r, c0 + 7] = math.hypot(held[i, 0], held[i, 1])
                rec[r, c0 + 8] = x[base + 4]
            cg = 1 + n_inv * rec_cols_per_inv
            rec[r, cg + 0] = va
            rec[r, cg + 1] = vb
            rec[r, cg + 2] = math.hypot(va, vb)
            rec[r, cg + 3] = freg[_F_FPCC]
            rec[r, cg + 4] = 1.0 * closed
            rec[r, cg + 5] = lv1
            ireg[_R_NREC] += 1

        # plant substeps with held controls
        for _sub in range(n_sub):
            tsub = t + _sub * dt
            _deriv(x, k1, n_inv, tsub, C, Li, Ri, vdc, Rl, Ll, held[:, 0], held[:, 1], held[:, 2],
                   load_kind, lv1, lv2, has_grid, closed, vg, wg, phig, cbus)
            for j in range(n_x):
                xt[j] = x[j] + 0.5 * dt * k1[j]
            _deriv(xt, k2, n_inv, tsub + 0.5 * dt, C, Li, Ri, vdc, Rl, Ll, held[:, 0], held[:, 1], held[:, 2],
                   load_kind, lv1, lv2, has_grid, closed, vg, wg, phig, cbus)
            for j in range(n_x):
                xt[j] = x[j] + 0.5 * dt * k2[j]
            _deriv(xt, k3, n_inv, tsub + 0.5 * dt, C, Li, Ri, vdc, Rl, Ll, held[:, 0], held[:, 1], held[:, 2],
                   load_kind, lv1, lv2, has_grid, closed, vg, wg, phig, cbus)
            for j in range(n_x):
                xt[j] = x[j] + dt * k3[j]
            _deriv(xt, k4, n_inv, tsub + dt, C, Li, Ri, vdc, Rl, Ll, held[:, 0], held[:, 1], held[:, 2],
                   load_kind, lv1, lv2, has_grid, closed, vg, wg, phig, cbus)
            for j in range(n_x):
                x[j] = x[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])

        ok = True
        for j in range(n_x):
            if not math.isfinite(x[j]):
                ok = False
        if not ok:
            ireg[_R_STATUS] = 4
            return
        ireg[_R_KSTEP] = k + 1
    ireg[_R_STATUS] = 0


_PER_INV_COLS = ("p_w", "q_var", "vcd_v", "vcq_v", "w1_rad_s", "iline_d_a", "iline_q_a", "m_mag", "theta1_rad")
_PCC_COLS = ("pcc_v_alpha_v", "pcc_v_beta_v", "pcc_v_amp_v", "pcc_f_hz", "breaker_closed", "load_value")


@dataclass
class SimReport:
    status: int
    saturation_events: list[int]
    breaker_close_time: float | None
    breaker_deferrals: int
    wall_steps: int


class Simulator:
    """Packs a Scenario into flat arrays and drives the compiled kernel."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        n = len(scenario.inverters)
        self.n_inv = n
        sim = scenario.sim

        self.C = np.array([u.params.C for u in scenario.inverters])
        self.Li = np.array([u.params.L_i for u in scenario.inverters])
        self.Ri = np.array([u.params.R_i for u in scenario.inverters])
        self.vdc = np.array([u.params.v_dc for u in scenario.inverters])
        self.Rl = np.array([u.line.R for u in scenario.inverters])
        self.Ll = np.array([u.line.L for u in scenario.inverters])
        self.v0 = np.array([u.v0 for u in scenario.inverters])
        self.i0d = np.array([u.i0_d for u in scenario.inverters])
        self.i0q = np.array([u.i0_q for u in scenario.inverters])
        self.v2nom = self.v0.copy()

        # discretize all controller banks at the control period
        banks = []
        for u in scenario.inverters:
            cs = u.controllers
            row = [cs.Kc, cs.Kc, cs.Kv_d, cs.Kv_q, cs.Keta_d, cs.Keta_q, cs.H_pll]
            banks.append([bilinear_discretize(tf, sim.control_dt) for tf in row])
        max_len = max(len(b) for row in banks for (b, _a) in row)
        self.fb = np.zeros((n, NBANK, max_len))
        self.fa = np.zeros((n, NBANK, max_len))
        self.order = np.zeros((n, NBANK), dtype=np.int64)
        for i, row in enumerate(banks):
            for j, (b, a) in enumerate(row):
                self.fb[i, j, : len(b)] = b
                self.fa[i, j, : len(a)] = a
                self.order[i, j] = len(a) - 1
        self.fstate = np.zeros((n, NBANK, max(max_len - 1, 1)))
        # pre-charge the inner-loop integrators with the resistive drop of the
        # initial current so zero tracking error needs no wind-up transient
        for i, u in enumerate(scenario.inverters):
            i_d0 = scenario.load.events[0].value if scenario.load.kind == "direct" else 0.0
            i_q0 = (
                scenario.load.events[0].value_q if scenario.load.kind == "direct" else 0.0
            ) + u.params.C * scenario.base.omega0 * u.v0
            self.fstate[i, _KC_D, 0] = u.params.R_i * i_d0
            self.fstate[i, _KC_Q, 0] = u.params.R_i * i_q0

        # continuous state: start at nominal voltage, zero line current, the
        # capacitor's own charging current on the q axis, staggered angles;
        # direct injection starts against its initial forced load instead of
        # zero so the t=0 inrush (and controller wind-up) is not exercised
        self.x = np.zeros(n * NS + 2)
        for i, u in enumerate(scenario.inverters):
            base = i * NS
            if scenario.load.kind == "direct":
                self.x[base + 0] = scenario.load.events[0].value
                self.x[base + 1] = scenario.load.events[0].value_q
            self.x[base + 1] += u.params.C * scenario.base.omega0 * u.v0
            self.x[base + 2] = u.v0
            self.x[base + 4] = u.theta0
        self.uv_prev = np.zeros((n, 2))
        self.held = np.zeros((n, 3))
        self.held[:, 2] = scenario.base.omega0

        kinds = {"resistance": _LOAD_RES, "current": _LOAD_SINK, "direct": _LOAD_DIRECT}
        self.load_kind = kinds[scenario.load.kind]
        self.load_t = np.array([e.t for e in scenario.load.events])
        self.load_v1 = np.array([e.value for e in scenario.load.events])
        self.load_v2 = np.array([e.value_q for e in scenario.load.events])

        g = scenario.grid
        self.has_grid = g is not None
        self.vg = g.amplitude if g else 0.0
        self.wg = g.omega if g else 0.0
        self.phig = g.phase0 if g else 0.0
        self.sync_tol = g.sync_tol if g else 0.02
        self.brk_t = np.array([e.t for e in g.events]) if g else np.zeros(0)
        self.brk_close = (
            np.array([1 if e.close else 0 for e in g.events], dtype=np.int64)
            if g
            else np.zeros(0, dtype=np.int64)
        )
        self.cbus = scenario.load.bus_capacitance

        self.sat_count = np.zeros(n, dtype=np.int64)
        self.brk_log = np.array([-1.0, 0.0])
        self.ireg = np.zeros(NIREG, dtype=np.int64)
        self.freg = np.zeros(NFREG)
        self.freg[_F_FPCC] = scenario.base.f0

        nx = n * NS + 2
        self._k1 = np.zeros(nx)
        self._k2 = np.zeros(nx)
        self._k3 = np.zeros(nx)
        self._k4 = np.zeros(nx)
        self._xt = np.zeros(nx)

    @property
    def columns(self) -> list[str]:
        cols = ["t_s"]
        for i in range(self.n_inv):
            cols += [f"inv{i + 1}_{c}" for c in _PER_INV_COLS]
        cols += list(_PCC_COLS)
        return cols

    def _advance(self, n_steps: int, rec: np.ndarray, rec_every: int):
        sim = self.scenario.sim
        _run(
            n_steps, self.n_inv, sim.substeps, sim.dt, sim.control_dt,
            self.scenario.base.omega0,
            self.C, self.Li, self.Ri, self.vdc, self.Rl, self.Ll,
            self.v0, self.i0d, self.i0q, self.v2nom,
            self.fb, self.fa, self.order, self.fstate,
            self.x, self.uv_prev, self.held,
            self.load_kind, self.load_t, self.load_v1, self.load_v2,
            self.has_grid, self.vg, self.wg, self.phig, self.sync_tol,
            self.brk_t, self.brk_close, self.cbus,
            rec_every, rec, len(_PER_INV_COLS),
            self.sat_count, self.brk_log, self.ireg, self.freg,
            self._k1, self._k2, self._k3, self._k4, self._xt,
        )

    def step(self) -> np.ndarray:
        """Advance one control step (controllers + plant substeps); returns the
        continuous state vector."""
        rec = np.zeros((1, len(self.columns)))
        saved = self.ireg[_R_NREC]
        self._advance(1, rec, 1_000_000_000)
        self.ireg[_R_NREC] = saved
        if self.ireg[_R_STATUS] == 4:
            raise NonFinite("simulation state became non-finite")
        return self.x.copy()

    def run(self) -> tuple[TimeSeries, SimReport]:
        sim = self.scenario.sim
        n_steps = sim.n_control_steps
        n_rec = n_steps // sim.record_every + 1
        rec = np.zeros((n_rec, len(self.columns)))
        self._advance(n_steps, rec, sim.record_every)
        status = int(self.ireg[_R_STATUS])
        n_valid = int(self.ireg[_R_NREC])
        rec = rec[:n_valid]
        meta = {
            "scenario": self.scenario.name,
            "scenario_hash": self.scenario.content_hash(),
            "seed": str(self.scenario.seed),
            "tool": "gridforge",
            "tool_version": _tool_version(),
            "dt_s": repr(sim.dt),
            "control_dt_s": repr(sim.control_dt),
            "record_every": str(sim.record_every),
            "v_base_v": repr(self.scenario.base.v_base),
            "i_base_a": repr(self.scenario.base.i_base),
            "f0_hz": repr(self.scenario.base.f0),
            "status": str(status),
        }
        events = [
            f"load t={e.t:g} value={e.value:g}" + (f" q={e.value_q:g}" if self.load_kind == _LOAD_DIRECT else "")
            for e in self.scenario.load.events
        ]
        if self.scenario.grid:
            for e in self.scenario.grid.events:
                events.append(f"breaker t={e.t:g} action={'close' if e.close else 'open'}")
            if self.brk_log[1] > 0:
                events.append(f"breaker closed at t={self.brk_log[0]:.6f}")
            if self.ireg[_R_DEFER] > 0:
                events.append(f"breaker close deferred {int(self.ireg[_R_DEFER])} control steps")
        for i in range(self.n_inv):
            if self.sat_count[i]:
                events.append(f"inv{i + 1} modulation clamped {int(self.sat_count[i])} control steps")
        ts = TimeSeries(columns=self.columns, data=rec, meta=meta, events=events)
        report = SimReport(
            status=status,
            saturation_events=[int(v) for v in self.sat_count],
            breaker_close_time=float(self.brk_log[0]) if self.brk_log[1] > 0 else None,
            breaker_deferrals=int(self.ireg[_R_DEFER]),
            wall_steps=int(self.ireg[_R_KSTEP]),
        )
        if status == 4:
            log.error("simulation aborted on non-finite state at t=%.6f s", self.ireg[_R_KSTEP] * sim.control_dt)
        return ts, report


def _tool_version() -> str:
    from . import __version__

    return __version__


def run_scenario(scenario: Scenario) -> tuple[TimeSeries, SimReport]:
    return Simulator(scenario).run()

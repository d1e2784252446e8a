import copy
import math

import numpy as np
import pytest

from gridforge.engine import Simulator, breaker_may_close, pcc_solve, run_scenario
from gridforge.metrics import power_balance
from gridforge.numerics import simulate_lti, tf_to_ss
from gridforge.plant import DQPair
from gridforge.scenario import GridSpec, build_scenario, load_scenario
from gridforge.synthesis import load_rejection_matrix, steady_state_droop
from gridforge.timeseries import TimeSeries

W0 = 2 * math.pi * 60


def direct_config(duration=2.0, family="general", beta_q=None, step=(40.0, 4.0)):
    ctl = {
        "family": family, "wc_rad_s": 300.0, "pm_deg": 53.0,
        "gamma_d_ohm": 1.0, "gamma_q_ohm": 1.0,
    }
    if beta_q is not None:
        ctl["beta_q"] = beta_q
    return {
        "version": 1,
        "name": "direct_unit",
        "base": {"v_base_v": 170.0, "i_base_a": 100.0, "f0_hz": 60.0},
        "sim": {"duration_s": duration, "dt_s": 5e-6, "control_dt_s": 5e-5,
                "record_every": 20},
        "control": ctl,
        "inverters": [{
            "filter": {"c_f": 40e-6, "l_i_h": 3.3e-3, "r_i_ohm": 0.2, "v_dc_v": 250.0},
            "line": {"r_ohm": 0.1, "x_ohm": 0.7},
            "sharing": 1.0, "i0_d_a": 30.0, "i0_q_a": 0.0, "theta0_rad": 0.0,
        }],
        "load": {"kind": "direct", "schedule": [
            {"t_s": 0.0, "d_a": 30.0, "q_a": 0.0},
            {"t_s": duration / 2, "d_a": step[0], "q_a": step[1]},
        ]},
    }


class TestPccSolve:
    def test_ohm_node(self):
        va, vb = pcc_solve([(100.0, 0.0)], "resistance", 1.7)
        assert (va, vb) == pytest.approx((170.0, 0.0))

    def test_breaker_closed_wins(self):
        grid = GridSpec(amplitude=170.0, omega=W0, phase0=0.0)
        va, vb = pcc_solve([(999.0, 99.0)], "resistance", 1.7, grid, True, t=0.0)
        assert (va, vb) == pytest.approx((170.0, 0.0))

    def test_three_sources_one_pu(self):
        currents = [(20.0, 0.0), (30.0, 0.0), (50.0, 0.0)]
        va, vb = pcc_solve(currents, "resistance", 1.7)
        assert math.hypot(va, vb) == pytest.approx(170.0)

    def test_sink_has_no_algebraic_solution(self):
        with pytest.raises(ValueError):
            pcc_solve([(1.0, 0.0)], "current", 10.0)


class TestBreakerLogic:
    def test_equal_phases_close(self):
        assert breaker_may_close(1.0, 1.0)

    def test_offset_blocks(self):
        assert not breaker_may_close(1.0, 1.0 + math.pi)

    def test_beat_alignment_time(self):
        # relative phase pi shrinking at the beat rate: first alignment near
        # offset/|w1 - wg|
        w1, wg = W0 + 0.5, W0
        tol = 0.02
        t = 0.0
        dt = 1e-3
        while not breaker_may_close(w1 * t + math.pi, wg * t, tol):
            t += dt
            assert t < 10.0
        assert t == pytest.approx((math.pi - tol) / 0.5, abs=0.01)

    def test_wraparound(self):
        assert breaker_may_close(2 * math.pi + 0.01, 0.0)


class TestEngineBasics:
    def test_determinism_bit_identical(self, tmp_path):
        cfg = direct_config(duration=0.2)
        runs = []
        for _ in range(2):
            ts, _ = run_scenario(build_scenario(copy.deepcopy(cfg)))
            p = tmp_path / f"run{len(runs)}.csv"
            ts.to_csv(p)
            runs.append(p.read_bytes())
        assert runs[0] == runs[1]

    def test_csv_round_trip_exact(self, tmp_path):
        ts, _ = run_scenario(build_scenario(direct_config(duration=0.2)))
        path = ts.to_csv(tmp_path / "ts.csv")
        back = TimeSeries.from_csv(path)
        assert back.columns == ts.columns
        assert np.array_equal(back.data, ts.data)
        assert back.meta == {k: str(v) for k, v in ts.meta.items()}

    def test_step_api_matches_run(self):
        cfg = direct_config(duration=0.01)
        sim_a = Simulator(build_scenario(copy.deepcopy(cfg)))
        for _ in range(cfg["sim"]["duration_s"] and 10):
            x = sim_a.step()
        sim_b = Simulator(build_scenario(copy.deepcopy(cfg)))
        rec = np.zeros((1, len(sim_b.columns)))
        sim_b._advance(10, rec, 10**9)
        np.testing.assert_array_equal(x, sim_b.x)

    def test_nonfinite_state_aborts(self):
        from gridforge.numerics import NonFinite

        sim = Simulator(build_scenario(direct_config(duration=0.01)))
        sim.x[0] = math.nan
        with pytest.raises(NonFinite):
            sim.step()

    def test_nonfinite_status_in_run(self):
        sc = build_scenario(direct_config(duration=0.01))
        sim = Simulator(sc)
        sim.x[2] = math.inf
        ts, rep = sim.run()
        assert rep.status == 4
        assert rep.wall_steps < sc.sim.n_control_steps

    def test_nominal_steady_state(self):
        # zero mismatch: voltage at setpoint, frequency at nominal, vcq -> 0
        cfg = direct_config(duration=1.0, family="general")
        cfg["load"]["schedule"] = [{"t_s": 0.0, "d_a": 30.0, "q_a": 0.0}]
        ts, rep = run_scenario(build_scenario(cfg))
        t = ts.t
        tail = t > 0.8
        assert ts.column("inv1_vcd_v")[tail].mean() == pytest.approx(170.0, abs=1e-3)
        assert ts.column("inv1_w1_rad_s")[tail].mean() == pytest.approx(W0, abs=1e-4)
        assert abs(ts.column("inv1_vcq_v")[tail]).max() < 1e-3


class TestSteadyDroopInvariant:
    @pytest.mark.parametrize("family,beta_q", [
        ("inductive", None),
        ("resistive", 0.12),
        ("general", None),
    ])
    def test_measured_matches_formula(self, family, beta_q):
        cfg = direct_config(duration=3.0, family=family, beta_q=beta_q)
        sc = build_scenario(cfg)
        ts, _ = run_scenario(sc)
        cs = sc.inverters[0].controllers
        t = ts.t
        pre = (t > 1.2) & (t < 1.48)
        post = t > 2.7
        dv = ts.column("inv1_vcd_v")[post].mean() - ts.column("inv1_vcd_v")[pre].mean()
        dw = ts.column("inv1_w1_rad_s")[post].mean() - ts.column("inv1_w1_rad_s")[pre].mean()
        # mismatch change across the step: i0 - load goes from 0 to (-10, -4)
        fam = "general" if (beta_q is not None or family == "general") else family
        dv_p, dw_p = steady_state_droop(cs, fam, DQPair(-10.0, -4.0), 170.0)
        assert dv == pytest.approx(dv_p, rel=0.01)
        assert dw == pytest.approx(dw_p, rel=0.01)


class TestAnalyticVsSimulation:
    def test_load_rejection_matches_time_domain(self):
        # closed-form voltage response to a load step against the full
        # nonlinear simulation; the step is small enough that the capacitor
        # slew stays far from the modulation limit (linear regime)
        cfg = direct_config(duration=3.0, family="general", step=(30.8, 0.3))
        # the closed-form model neglects the PLL's frame coupling into the q
        # loop; a faster voltage loop keeps that q-axis residual inside the
        # stated band
        cfg["control"]["wc_rad_s"] = 600.0
        cfg["sim"]["record_every"] = 4
        sc = build_scenario(cfg)
        ts, rep = run_scenario(sc)
        assert rep.status == 0
        assert rep.saturation_events == [0]
        cs = sc.inverters[0].controllers
        m = load_rejection_matrix(cs, sc.inverters[0].params.C)
        di = np.array([0.8, 0.3])  # load step amplitudes

        t = ts.t
        t_step = 1.5
        mask = (t >= t_step) & (t <= t_step + 1.2)
        tt = t[mask] - t_step
        base_d = ts.column("inv1_vcd_v")[(t > 1.2) & (t < 1.48)].mean()
        base_q = ts.column("inv1_vcq_v")[(t > 1.2) & (t < 1.48)].mean()
        sim_d = ts.column("inv1_vcd_v")[mask] - base_d
        sim_q = ts.column("inv1_vcq_v")[mask] - base_q

        refs = []
        for row in range(2):
            tf = (m[row, 0] * di[0] + m[row, 1] * di[1]).cancel()
            ss = tf_to_ss(tf)
            _, y = simulate_lti(ss, lambda _t: [1.0], t_end=1.2, dt=1e-5)
            refs.append(np.interp(tt, np.arange(len(y)) * 1e-5, y[:, 0]))
        scale = max(np.abs(refs[0]).max(), np.abs(refs[1]).max())
        for sim_y, ref_y, name in ((sim_d, refs[0], "d"), (sim_q, refs[1], "q")):
            rms = math.sqrt(np.mean((sim_y - ref_y) ** 2))
            assert rms < 0.02 * scale, f"axis {name}: transient RMS {rms/scale:.4f}"
            # steady-state agreement
            assert sim_y[-10:].mean() == pytest.approx(
                ref_y[-10:].mean(), abs=0.005 * scale
            )


@pytest.fixture(scope="module")
def table1():
    sc = load_scenario("table1_three_inverter")
    ts, rep = run_scenario(sc)
    return sc, ts, rep


class TestMicrogridInvariants:

    def test_status_clean(self, table1):
        _, _, rep = table1
        assert rep.status == 0

    def test_q_axis_regulation_converged(self):
        # the inter-inverter synchronization swing decays at ~1/s, so the
        # 1e-4 bound is a statement about the converged state: hold the load
        # and give the startup transient time to die
        import copy

        sc0 = load_scenario("table1_three_inverter")
        cfg = copy.deepcopy(sc0.source)
        cfg["load"]["schedule"] = [{"t_s": 0.0, "value_pu": 1.0}]
        cfg["sim"]["duration_s"] = 13.0
        sc = build_scenario(cfg)
        ts, _ = run_scenario(sc)
        t = ts.t
        tail = t > sc.sim.duration - 0.5
        for i, u in enumerate(sc.inverters):
            vcq = np.abs(ts.column(f"inv{i + 1}_vcq_v")[tail]).max()
            assert vcq / u.v0 < 1e-4

    def test_q_axis_decaying_after_steps(self, table1):
        sc, ts, _ = table1
        t = ts.t
        t_last = sc.load.events[-1].t
        for i in range(3):
            vq = np.abs(ts.column(f"inv{i + 1}_vcq_v"))
            early = vq[(t > t_last + 0.2) & (t < t_last + 1.0)].max()
            late = vq[t > sc.sim.duration - 0.5].max()
            assert late < 0.5 * early + 1e-6

    def test_power_balance(self, table1):
        sc, ts, _ = table1
        assert power_balance(ts, sc, guard=0.5) < 1e-3

    def test_zero_mismatch_fixpoint(self):
        # identical short-line inverters with the resistive load tuned until
        # the drawn current equals the setpoint sum exactly: frequencies land
        # on nominal and the PCC voltage on the shared setpoint. The run is
        # long because the anti-symmetric synchronization mode decays at ~1/s.
        cfg = {
            "version": 1, "name": "fixpoint",
            "base": {"v_base_v": 170.0, "i_base_a": 45.0, "f0_hz": 60.0},
            "sim": {"duration_s": 8.0, "dt_s": 5e-6, "control_dt_s": 5e-5,
                    "record_every": 20},
            "control": {"family": "inductive", "wc_rad_s": 300.0, "pm_deg": 53.0,
                        "gamma_d_ohm": 0.2, "gamma_q_ohm": 2.0},
            "inverters": [
                {"filter": {"c_f": 40e-6, "l_i_h": 3.3e-3, "r_i_ohm": 0.2,
                            "v_dc_v": 250.0},
                 "line": {"r_ohm": 0.01, "x_ohm": 0.04},
                 "sharing": 1.0 / 3.0, "i0_d_a": 15.0, "v0_v": 170.0,
                 "theta0_rad": th}
                for th in (0.0, 0.01, 0.02)
            ],
            "load": {"kind": "resistance",
                     "schedule": [{"t_s": 0.0, "value_pu": 1.0}]},
        }
        # analytic first guess: per-line series drop at the setpoint current
        r_load = abs(170.0 - (0.01 + 0.04j) * 15.0) / 45.0
        for _ in range(4):
            cfg["load"]["schedule"][0]["value_pu"] = float(170.0 / (45.0 * r_load))
            sc = build_scenario(cfg)
            ts, _ = run_scenario(sc)
            t = ts.t
            tail = t > sc.sim.duration - 0.5
            v_amp = ts.column("pcc_v_amp_v")[tail].mean()
            i_d_mean = np.mean([
                ts.column(f"inv{i + 1}_iline_d_a")[tail].mean() for i in range(3)
            ])
            if abs(i_d_mean - 15.0) < 2e-3:
                break
            r_load *= 1.0 + (i_d_mean - 15.0) / 15.0
        for i in range(3):
            w_dev = abs(ts.column(f"inv{i + 1}_w1_rad_s")[tail].mean() - W0)
            assert w_dev < 1e-4
        assert abs(v_amp - 170.0) / 170.0 < 1e-3

    def test_saturation_events_logged(self, table1):
        sc, ts, rep = table1
        assert all(s < 5000 for s in rep.saturation_events)
        if any(rep.saturation_events):
            assert any("clamped" in ev for ev in ts.events)

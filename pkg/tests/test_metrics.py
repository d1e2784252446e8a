import math

import numpy as np
import pytest

from gridforge.metrics import InsufficientWindow, metrics, power_balance
from gridforge.scenario import build_scenario
from gridforge.timeseries import TimeSeries

W0 = 2 * math.pi * 60


def synthetic_scenario(duration=4.0, events=((0.0, 1.0), (2.0, 1.2))):
    return build_scenario({
        "version": 1,
        "name": "synthetic",
        "base": {"v_base_v": 170.0, "i_base_a": 100.0, "f0_hz": 60.0},
        "sim": {"duration_s": duration},
        "control": {"family": "general", "wc_rad_s": 300.0, "pm_deg": 53.0,
                    "gamma_d_ohm": 1.0, "gamma_q_ohm": 1.0},
        "inverters": [{
            "filter": {"c_f": 40e-6, "l_i_h": 3.3e-3, "r_i_ohm": 0.2, "v_dc_v": 250.0},
            "line": {"r_ohm": 0.1, "x_ohm": 0.7},
            "sharing": 1.0,
        }],
        "load": {"kind": "resistance",
                 "schedule": [{"t_s": t, "value_pu": v} for t, v in events]},
    })


def synthetic_series(scenario, slope_w=-0.05, slope_v=0.4):
    """Piecewise-constant series with an injected exact droop slope."""
    n = 400
    t = np.linspace(0.0, scenario.sim.duration, n, endpoint=False)
    i_d = np.where(t < 2.0, 100.0, 120.0)
    w1 = W0 + slope_w * (i_d - 100.0)
    vcd = 170.0 + slope_v * (i_d - 100.0)
    zeros = np.zeros(n)
    cols = {
        "t_s": t,
        "inv1_p_w": vcd * i_d,
        "inv1_q_var": zeros,
        "inv1_vcd_v": vcd,
        "inv1_vcq_v": zeros,
        "inv1_w1_rad_s": w1,
        "inv1_iline_d_a": i_d,
        "inv1_iline_q_a": zeros,
        "inv1_m_mag": np.full(n, 0.7),
        "inv1_theta1_rad": W0 * t,
        "pcc_v_alpha_v": vcd * np.cos(W0 * t),
        "pcc_v_beta_v": vcd * np.sin(W0 * t),
        "pcc_v_amp_v": vcd,
        "pcc_f_hz": w1 / (2 * math.pi),
        "breaker_closed": zeros,
        "load_value": np.where(t < 2.0, 1.7, 1.7 / 1.2),
    }
    return TimeSeries(list(cols), np.column_stack(list(cols.values())))


class TestMetrics:
    def test_exact_slope_recovery(self):
        sc = synthetic_scenario()
        ts = synthetic_series(sc, slope_w=-0.05, slope_v=0.4)
        rpt = metrics(ts, sc)
        assert rpt.droop_slope_w_per_inverter[0] == pytest.approx(-0.05, rel=1e-9)
        assert rpt.droop_slope_v_per_inverter[0] == pytest.approx(0.4, rel=1e-9)
        assert rpt.droop_slope_w_aggregate == pytest.approx(-0.05, rel=1e-9)

    def test_event_windows_and_sharing(self):
        sc = synthetic_scenario()
        ts = synthetic_series(sc)
        rpt = metrics(ts, sc)
        assert len(rpt.events) == 2
        assert rpt.events[0].sharing == [1.0]
        assert rpt.events[0].f_dev_hz == pytest.approx(0.0, abs=1e-12)
        assert rpt.events[1].f_dev_hz == pytest.approx(-0.05 * 20 / (2 * math.pi))

    def test_settle_time_zero_for_instant_step(self):
        sc = synthetic_scenario()
        ts = synthetic_series(sc)
        rpt = metrics(ts, sc)
        assert rpt.events[1].settle_s[0] == pytest.approx(0.0, abs=0.02)

    def test_insufficient_window(self):
        sc = synthetic_scenario(duration=2.5, events=((0.0, 1.0), (2.4, 1.2)))
        ts = synthetic_series(sc)
        with pytest.raises(InsufficientWindow):
            metrics(ts, sc)

    def test_rows_shape(self):
        sc = synthetic_scenario()
        rpt = metrics(synthetic_series(sc), sc)
        header, row = rpt.rows()
        assert len(header) == len(row)
        assert "q_regulation" in header

    def test_text_mentions_events(self):
        sc = synthetic_scenario()
        text = metrics(synthetic_series(sc), sc).text()
        assert "event t=0s" in text
        assert "event t=2s" in text


class TestPowerBalance:
    def test_synthetic_islanded_resistive(self):
        # consistent synthetic series: v = R * i at the PCC, loss in the line
        sc = synthetic_scenario(events=((0.0, 1.0),))
        n = 200
        t = np.linspace(0, 4.0, n, endpoint=False)
        i_d = np.full(n, 100.0)
        r_line = sc.inverters[0].line.R
        r_load = 1.7
        v_pcc = r_load * i_d
        vcd = v_pcc + r_line * i_d  # collinear: amplitude adds
        zeros = np.zeros(n)
        cols = {
            "t_s": t,
            "inv1_p_w": vcd * i_d,
            "inv1_q_var": zeros,
            "inv1_vcd_v": vcd,
            "inv1_vcq_v": zeros,
            "inv1_w1_rad_s": np.full(n, W0),
            "inv1_iline_d_a": i_d,
            "inv1_iline_q_a": zeros,
            "inv1_m_mag": np.full(n, 0.7),
            "inv1_theta1_rad": W0 * t,
            "pcc_v_alpha_v": v_pcc * np.cos(W0 * t),
            "pcc_v_beta_v": v_pcc * np.sin(W0 * t),
            "pcc_v_amp_v": v_pcc,
            "pcc_f_hz": np.full(n, 60.0),
            "breaker_closed": zeros,
            "load_value": np.full(n, r_load),
        }
        ts = TimeSeries(list(cols), np.column_stack(list(cols.values())))
        assert power_balance(ts, sc) < 1e-12

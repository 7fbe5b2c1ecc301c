import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctfsim.device import (DeviceState, ModelParams, OdeParams,
                           SplitNormalizationError, apply_pulse_deadzone,
                           closed_form_vtn, dead_time, load_params, run_train,
                           run_train_ode, save_params, split_sweep, vt_of)
from ctfsim.protocol import (GAP_GRID_DEFAULT, TABLE1_N, Pulse,
                             table1_trains, with_intermediate_reads)

# Hand-pinned parameter set: cold-start dead time is exactly 2.0 us
# (u_c = 0.95 forces tau_trap = 2 us / ln 20).
PINNED = ModelParams(
    tau_trap_s=2e-6 / math.log(20.0),
    tau_detrap_s=1e-3,
    u_c=0.95,
    A_V=0.3 / math.log(5.0),
    t0_s=1e-6,
    VT0_V=-1.2,
    VTmax_V=4.0,
)


def ideal(params):
    """Same scales, but zero trapping time."""
    return ModelParams(
        tau_trap_s=0.0, tau_detrap_s=params.tau_detrap_s, u_c=params.u_c,
        A_V=params.A_V, t0_s=params.t0_s, VT0_V=params.VT0_V, VTmax_V=params.VTmax_V)


# ---------------------------------------------------------------------------
# dead_time
# ---------------------------------------------------------------------------

def test_dead_time_cold_start_pins_knee():
    assert dead_time(0.0, PINNED) == pytest.approx(2.0e-6, rel=1e-12)


def test_dead_time_zero_past_critical_occupancy():
    assert dead_time(PINNED.u_c, PINNED) == 0.0
    assert dead_time(0.99, PINNED) == 0.0


def test_dead_time_midway_occupancy():
    # tau' * ln(0.5 / 0.05), independent arithmetic
    expected = (2e-6 / math.log(20.0)) * math.log(10.0)
    assert dead_time(0.5, PINNED) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.537e-6, rel=1e-3)


def test_dead_time_zero_trapping_time():
    assert dead_time(0.0, ideal(PINNED)) == 0.0


def test_dead_time_rejects_bad_occupancy():
    with pytest.raises(ValueError):
        dead_time(-0.1, PINNED)
    with pytest.raises(ValueError):
        dead_time(1.1, PINNED)


# ---------------------------------------------------------------------------
# apply_pulse_deadzone / vt_of
# ---------------------------------------------------------------------------

def test_pulse_below_dead_time_disables_programming():
    state = apply_pulse_deadzone(DeviceState(), Pulse(12.5, 1.25e-6), 10.0, PINNED)
    assert state.t_nv_s == 0.0
    assert state.clock_s == pytest.approx(10.0 + 1.25e-6)


def test_zero_trapping_time_accumulates_full_width():
    state = apply_pulse_deadzone(DeviceState(), Pulse(12.5, 1.25e-6), 10.0, ideal(PINNED))
    assert state.t_nv_s == 1.25e-6


def test_pulse_just_above_dead_time():
    state = apply_pulse_deadzone(DeviceState(), Pulse(12.5, 2.5e-6), 10.0, PINNED)
    assert state.t_nv_s == pytest.approx(0.5e-6, rel=1e-9)


def test_occupancy_charges_then_decays():
    state = apply_pulse_deadzone(DeviceState(), Pulse(12.5, 2.5e-6), 1e-3, PINNED)
    charged = 1.0 - math.exp(-2.5e-6 / PINNED.tau_trap_s)
    assert state.u == pytest.approx(charged * math.exp(-1.0), rel=1e-12)


def test_vt_of_initial_and_log_law():
    assert vt_of(DeviceState(), PINNED) == PINNED.VT0_V == -1.2
    # t_nv = t0 (e - 1) puts the shift exactly at one log slope
    state = DeviceState(t_nv_s=PINNED.t0_s * (math.e - 1.0))
    assert vt_of(state, PINNED) == pytest.approx(PINNED.VT0_V + PINNED.A_V, rel=1e-12)


def test_vt_clamped_at_saturation():
    state = DeviceState(t_nv_s=1e12)
    assert vt_of(state, PINNED) == PINNED.VTmax_V


def test_read_blind_to_occupancy():
    a = DeviceState(u=0.0, t_nv_s=5e-4)
    b = DeviceState(u=1.0, t_nv_s=5e-4)
    assert vt_of(a, PINNED) == vt_of(b, PINNED)


# ---------------------------------------------------------------------------
# run_train / closed_form_vtn
# ---------------------------------------------------------------------------

def test_single_pulse_closed_form_anchor():
    (train,) = table1_trains(2.5e-3, [1], 10.0)
    trace = run_train(train, PINNED)
    expected = PINNED.VT0_V + PINNED.A_V * math.log(1.0 + (2.5e-3 - 2e-6) / PINNED.t0_s)
    assert trace.final_vt == pytest.approx(expected, rel=1e-12)
    assert trace.entries[0] == (0, PINNED.VT0_V)


def test_sub_knee_train_stays_erased():
    (train,) = table1_trains(2.5e-3, [2000], 10.0)  # t_pw = 1.25 us < knee
    assert run_train(train, PINNED).final_vt == PINNED.VT0_V


def test_run_train_deterministic():
    (train,) = table1_trains(2.5e-3, [500], 10.0)
    assert run_train(train, PINNED) == run_train(train, PINNED)


def test_run_train_rejects_unknown_variant():
    (train,) = table1_trains(2.5e-3, [1], 10.0)
    with pytest.raises(ValueError):
        run_train(train, PINNED, variant="banana")


def test_run_train_emits_requested_reads():
    (train,) = table1_trains(2.5e-3, [1000], 10.0)
    train = with_intermediate_reads(train, (0, 1, 10, 100, 1000))
    trace = run_train(train, PINNED)
    assert trace.pulse_numbers == (0, 1, 10, 100, 1000)
    vts = trace.vt_values
    assert all(b >= a for a, b in zip(vts, vts[1:]))


def test_closed_form_matches_stepped_everywhere():
    worst = 0.0
    for train in table1_trains(2.5e-3, list(TABLE1_N), 10.0):
        for gap in GAP_GRID_DEFAULT:
            stepped = run_train(train.with_gap(gap), PINNED).final_vt
            closed = closed_form_vtn(train.count, train.pulse.width, gap, PINNED)
            worst = max(worst, abs(stepped - closed))
    assert worst < 1e-9


def test_closed_form_large_gap_limit():
    # gaps far beyond the de-trap time: every pulse starts cold
    n, width = 500, 5e-6
    vt = closed_form_vtn(n, width, 10.0, PINNED)
    tnv = n * (width - 2e-6)
    expected = vt_of(DeviceState(t_nv_s=tnv), PINNED)
    assert vt == pytest.approx(expected, rel=1e-9)


def test_closed_form_ideal_device_conserves_on_time():
    p = ideal(PINNED)
    ref = closed_form_vtn(1, 2.5e-3, 10.0, p)
    for n in TABLE1_N:
        assert abs(closed_form_vtn(n, 2.5e-3 / n, 10.0, p) - ref) < 1e-6


def test_closed_form_single_pulse_equals_run_train():
    (train,) = table1_trains(2.5e-3, [1], 10.0)
    assert closed_form_vtn(1, 2.5e-3, 10.0, PINNED) == pytest.approx(
        run_train(train, PINNED).final_vt, abs=1e-12)


def test_hard_cutoff_is_exact_at_steady_state():
    # entry occupancy saturates below u_c at 10 s gaps; sub-knee width
    # must leave the threshold exactly at its erased value
    assert closed_form_vtn(5000, 0.5e-6, 10.0, PINNED) == PINNED.VT0_V


@settings(max_examples=40, deadline=None)
@given(gap_exp=st.floats(min_value=-7, max_value=1),
       n=st.sampled_from([10, 100, 1000, 4321]))
def test_closed_form_agrees_with_stepper_property(gap_exp, n):
    gap = 10.0 ** gap_exp
    train = table1_trains(2.5e-3, [n], gap)[0]
    stepped = run_train(train, PINNED).final_vt
    closed = closed_form_vtn(n, train.pulse.width, gap, PINNED)
    assert abs(stepped - closed) < 1e-9


@settings(max_examples=30, deadline=None)
@given(n=st.sampled_from([100, 500, 1000, 2000, 10000]))
def test_gap_recovery_monotone(n):
    width = 2.5e-3 / n
    vts = [closed_form_vtn(n, width, g, PINNED) for g in GAP_GRID_DEFAULT]
    assert all(b <= a + 1e-12 for a, b in zip(vts, vts[1:]))


def test_fragmentation_penalty_monotone_in_n():
    vts = [closed_form_vtn(n, 2.5e-3 / n, 10.0, PINNED) for n in TABLE1_N]
    assert all(b <= a + 1e-12 for a, b in zip(vts, vts[1:]))


# ---------------------------------------------------------------------------
# ODE variant
# ---------------------------------------------------------------------------

ODE = OdeParams(j0=3.8e6, beta=120.0, kappa=2.0, eta=1.0)


def test_ode_self_convergence(params, ode_params):
    (train,) = table1_trains(2.5e-3, [500], 10.0)
    dt = train.pulse.width / 20.0
    a = run_train_ode(train, params, ode_params, dt).final_vt
    b = run_train_ode(train, params, ode_params, dt / 2.0).final_vt
    assert abs(a - b) < 1e-6


def test_ode_conserves_without_field_enhancement(params):
    ode = OdeParams(j0=3.8e6, beta=120.0, kappa=0.0, eta=1.0)
    vals = []
    for n in (1, 50, 1000, 10000):
        train = table1_trains(2.5e-3, [n], 10.0)[0]
        vals.append(run_train_ode(train, params, ode, train.pulse.width / 20).final_vt)
    assert max(vals) - min(vals) < 1e-6


def test_ode_fragmentation_ordering(params, ode_params):
    vals = []
    for n in (1, 100, 1000, 10000):
        train = table1_trains(2.5e-3, [n], 10.0)[0]
        vals.append(run_train_ode(train, params, ode_params,
                                  train.pulse.width / 20).final_vt)
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_ode_charge_monotone_along_trace(params, ode_params):
    (train,) = table1_trains(2.5e-3, [100], 10.0)
    train = with_intermediate_reads(train, tuple(range(0, 101, 10)))
    trace = run_train_ode(train, params, ode_params, train.pulse.width / 20)
    vts = trace.vt_values
    assert all(b >= a for a, b in zip(vts, vts[1:]))


def test_ode_rejects_coarse_step(params, ode_params):
    (train,) = table1_trains(2.5e-3, [10], 10.0)
    with pytest.raises(ValueError):
        run_train_ode(train, params, ode_params, train.pulse.width / 5.0)


def test_ode_via_run_train_dispatch(params, ode_params):
    (train,) = table1_trains(2.5e-3, [50], 10.0)
    a = run_train(train, params, variant="ode", ode=ode_params,
                  dt_max=train.pulse.width / 50)
    b = run_train_ode(train, params, ode_params, train.pulse.width / 50)
    assert a.final_vt == b.final_vt


# ---------------------------------------------------------------------------
# split sweeps
# ---------------------------------------------------------------------------

def test_bo_split_reduction_ordering(params):
    splits = [(f"bo={b}", params.with_bo_scale(b)) for b in (1.0, 1.25, 1.67)]
    result = split_sweep(splits, list(TABLE1_N), 2.5e-3)
    red = result.reduction_at(1000)
    vals = [red[lab] for lab, _ in splits]
    assert vals[0] < vals[1] < vals[2]


def test_to_ctl_splits_with_zero_sensitivity_identical(params):
    import dataclasses
    splits = [("to-4nm", params), ("to-5nm", dataclasses.replace(params)),
              ("ctl-pda", dataclasses.replace(params))]
    result = split_sweep(splits, [1, 100, 1000], 2.5e-3)
    assert result.vt["to-4nm"] == result.vt["to-5nm"] == result.vt["ctl-pda"]


def test_single_split_degenerates_to_run_train(params):
    result = split_sweep([("base", params)], [1, 1000], 2.5e-3)
    (train,) = table1_trains(2.5e-3, [1000], 10.0)
    assert result.vtn("base", 1000) == pytest.approx(
        run_train(train, params).final_vt, abs=1e-12)


def test_split_normalization_gate(params):
    import dataclasses
    # a grossly different log slope shifts the single-pulse threshold
    bad = dataclasses.replace(params, A_V=params.A_V * 1.5)
    with pytest.raises(SplitNormalizationError) as err:
        split_sweep([("base", params), ("bad-split", bad)], [1, 10], 2.5e-3)
    assert err.value.label == "bad-split"


# ---------------------------------------------------------------------------
# parameter validation and file round trip
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("field,value", [
    ("tau_trap_s", -1e-6),
    ("tau_detrap_s", 0.0),
    ("u_c", 0.0),
    ("u_c", 1.0),
    ("A_V", 0.0),
    ("t0_s", 0.0),
    ("bo_scale", 0.0),
    ("VTmax_V", -2.0),
])
def test_params_invariants(field, value):
    import dataclasses
    with pytest.raises(ValueError):
        dataclasses.replace(PINNED, **{field: value})


def test_params_roundtrip(tmp_path, params, ode_params):
    path = tmp_path / "p.yaml"
    save_params(params, path, ode=ode_params)
    back, ode_back = load_params(path)
    assert back == params
    assert ode_back == ode_params


def test_effective_tau_includes_split_hooks():
    import dataclasses
    p = dataclasses.replace(PINNED, bo_scale=1.25, to_sens=0.1, ctl_sens=0.2)
    expected = PINNED.tau_trap_s * 1.25 * 1.1 * 1.2
    assert p.tau_trap_eff == pytest.approx(expected, rel=1e-12)

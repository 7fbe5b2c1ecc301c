import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctfsim.device import ModelParams, closed_form_vtn, run_train
from ctfsim.protocol import Pulse, PulseTrain
from ctfsim.rpu import (BitStream, UncompensatableError, UpdateErrorReport,
                        coincidence_update, compensated_schedule, device_update,
                        encode, error_decomposition)

PINNED = ModelParams(
    tau_trap_s=2e-6 / math.log(20.0),
    tau_detrap_s=1e-3,
    u_c=0.95,
    A_V=0.3 / math.log(5.0),
    t0_s=1e-6,
    VT0_V=-1.2,
    VTmax_V=4.0,
)

IDEAL = ModelParams(
    tau_trap_s=0.0, tau_detrap_s=1e-3, u_c=0.95, A_V=PINNED.A_V,
    t0_s=1e-6, VT0_V=-1.2, VTmax_V=4.0)


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

def test_encode_degenerate_probabilities():
    assert not encode(0.0, 1000, 1).bits.any()
    assert encode(1.0, 1000, 1).bits.all()


def test_encode_deterministic_byte_for_byte():
    a = encode(0.37, 4096, seed=99)
    b = encode(0.37, 4096, seed=99)
    assert a.bits.tobytes() == b.bits.tobytes()
    c = encode(0.37, 4096, seed=100)
    assert a.bits.tobytes() != c.bits.tobytes()


def test_encode_validates_arguments():
    with pytest.raises(ValueError):
        encode(-0.1, 10, 0)
    with pytest.raises(ValueError):
        encode(1.1, 10, 0)
    with pytest.raises(ValueError):
        encode(0.5, 0, 0)


def test_encode_popcount_spread_matches_binomial():
    # sample sigma/mu of the ONE count over many seeds
    p, n, seeds = 0.5, 100000, 400
    counts = np.array([encode(p, n, s).bits.sum() for s in range(seeds)])
    rel = counts.std(ddof=1) / counts.mean()
    expected = math.sqrt((1.0 - p) / (n * p))
    assert rel == pytest.approx(expected, rel=0.10)


# ---------------------------------------------------------------------------
# coincidence_update
# ---------------------------------------------------------------------------

def test_coincidence_all_ones_and_zeros():
    ones = encode(1.0, 500, 0)
    zeros = encode(0.0, 500, 0)
    x = encode(0.7, 500, 3)
    assert coincidence_update(ones, ones) == 500
    assert coincidence_update(x, zeros) == 0


def test_coincidence_length_mismatch():
    with pytest.raises(ValueError):
        coincidence_update(encode(0.5, 10, 0), encode(0.5, 11, 0))


def test_coincidence_mean_within_binomial_bounds():
    n, trials, p = 10000, 300, 0.5
    counts = [coincidence_update(encode(p, n, 2 * t), encode(p, n, 2 * t + 1))
              for t in range(trials)]
    mean = np.mean(counts)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert abs(mean - n / 4) < 3.0 * sigma / math.sqrt(trials)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32),
       n=st.integers(min_value=1, max_value=2000))
def test_coincidence_symmetric(seed, n):
    x = encode(0.4, n, seed)
    d = encode(0.6, n, seed + 1)
    assert coincidence_update(x, d) == coincidence_update(d, x)


# ---------------------------------------------------------------------------
# device_update
# ---------------------------------------------------------------------------

def test_device_update_reduces_to_uniform_train():
    n, width, gap = 400, 2.5e-6, 10.0
    ones = encode(1.0, n, 0)
    dv = device_update(ones, ones, width, gap, PINNED)
    train = PulseTrain(Pulse(12.5, width), n, gap)
    expected = run_train(train, PINNED).final_vt - PINNED.VT0_V
    assert dv == expected  # bit-identical arithmetic path


def test_device_update_zero_coincidences():
    x = encode(1.0, 100, 0)
    z = encode(0.0, 100, 0)
    assert device_update(x, z, 2.5e-6, 1e-6, PINNED) == 0.0


def test_contiguous_beats_spread_placement():
    # same coincidence count; bunched pulses keep the oxide charged
    n, k, width, gap = 1000, 50, 2.5e-6, 1e-6
    contiguous = np.zeros(n, dtype=bool)
    contiguous[:k] = True
    spread = np.zeros(n, dtype=bool)
    spread[::(n // k)] = True
    assert spread.sum() == k
    bs = lambda bits: BitStream(bits=bits, p=k / n, seed=0)
    dv_contig = device_update(bs(contiguous), bs(contiguous), width, gap, PINNED)
    dv_spread = device_update(bs(spread), bs(spread), width, gap, PINNED)
    assert dv_contig >= dv_spread
    assert dv_contig > 0.0


def test_device_update_validates_inputs():
    x = encode(0.5, 10, 0)
    with pytest.raises(ValueError):
        device_update(x, encode(0.5, 11, 0), 1e-6, 1e-6, PINNED)
    with pytest.raises(ValueError):
        device_update(x, x, 0.0, 1e-6, PINNED)
    with pytest.raises(ValueError):
        device_update(x, x, 1e-6, 0.0, PINNED)


# ---------------------------------------------------------------------------
# error_decomposition
# ---------------------------------------------------------------------------

def test_random_error_scales_inverse_sqrt():
    reports = error_decomposition(
        [100, 400], 0.5, 0.5, lambda n: 2.5e-3 / n, PINNED,
        trials=1500, seed=7)
    ratio = reports[1].random_rel_err / reports[0].random_rel_err
    assert ratio == pytest.approx(0.5, rel=0.10)
    # coarse binomial bound: sigma/mu within 20% of 1/sqrt(n p_eff)
    for r in reports:
        assert r.random_rel_err == pytest.approx(1.0 / math.sqrt(r.n * 0.25), rel=0.20)


def test_systematic_error_structure():
    reports = error_decomposition(
        [1, 100, 1000, 2000], 0.5, 0.5, lambda n: 2.5e-3 / n, PINNED,
        trials=100, seed=7, placement_trials=20)
    sys_err = [r.systematic_rel_err for r in reports]
    assert sys_err[0] == 0.0
    assert all(b >= a for a, b in zip(sys_err, sys_err[1:]))
    assert sys_err[-1] == 1.0  # below the knee the update is disabled


def test_ideal_device_has_no_systematic_error():
    reports = error_decomposition(
        [1, 100, 2000], 0.5, 0.5, lambda n: 2.5e-3 / n, IDEAL,
        trials=100, seed=7, placement_trials=20)
    for r in reports:
        assert r.systematic_rel_err == pytest.approx(0.0, abs=1e-12)
    assert reports[1].random_rel_err > reports[2].random_rel_err


def test_gap_noise_vanishes_beyond_critical_gap():
    noise = {}
    for gap in (1e-6, 1e-2, 10.0):
        (report,) = error_decomposition(
            [200], 0.5, 0.5, lambda n: 2.5e-3 / n, PINNED,
            trials=100, seed=11, base_gap=gap, placement_trials=60)
        noise[gap] = report.gap_noise_rel
    assert noise[1e-6] > 1e-4          # pulses interact at short gaps
    assert noise[10.0] < 1e-12         # fully de-trapped: placement-blind
    assert noise[10.0] <= noise[1e-2] + 1e-12 <= noise[1e-6]


def test_error_decomposition_requires_trials():
    with pytest.raises(ValueError):
        error_decomposition([10], 0.5, 0.5, lambda n: 1e-6, PINNED,
                            trials=10, seed=0)


def test_report_fields_non_negative():
    with pytest.raises(ValueError):
        UpdateErrorReport(n=1, random_rel_err=-0.1, systematic_rel_err=0.0,
                          gap_noise_rel=0.0)


# ---------------------------------------------------------------------------
# compensated_schedule
# ---------------------------------------------------------------------------

def test_compensation_count_arithmetic():
    # 2 ms effective target at 25 us pulses with a 2 us dead zone
    train = compensated_schedule(25e-6, 2e-3, PINNED)
    assert train.count == math.ceil(2e-3 / 23e-6) == 87


def test_compensation_ideal_device_exact_division():
    train = compensated_schedule(25e-6, 2e-3, IDEAL)
    assert train.count == 80


def test_compensated_train_hits_target_within_one_pulse():
    width, target = 5e-6, 2e-3
    train = compensated_schedule(width, target, PINNED)
    per_pulse = width - 2e-6
    achieved = train.count * per_pulse
    assert target <= achieved < target + width


def test_compensation_rejects_sub_knee_width():
    with pytest.raises(UncompensatableError):
        compensated_schedule(1.25e-6, 2e-3, PINNED)


def test_compensation_small_gap_wakes_up_sub_knee_width():
    # below the cold-start knee but above the steady-state dead time when
    # the oxide stays charged between pulses
    train = compensated_schedule(1.25e-6, 1e-4, PINNED, gap=1e-6)
    vt = closed_form_vtn(train.count, 1.25e-6, 1e-6, PINNED)
    assert vt > PINNED.VT0_V

"""Weight-update errors for stochastic-bitstream programming.

An analog weight update fires a program pulse whenever the two Bernoulli
bitstreams encoding the operands are both ON in a slot. Three error
contributions are quantified against the single-pulse ideal:

* random: binomial spread of the coincidence count, sigma/mu ~ 1/sqrt(n),
* systematic: threshold-shift deficit of an n-pulse train versus one pulse
  of equal total ON time (pulse-division penalty),
* gap noise: spread of the shift across random pulse placements at a
  fixed coincidence count, caused by gap-dependent pulse interaction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import (DeviceState, ModelParams, apply_pulse_deadzone,
                     closed_form_vtn, dead_time, vt_of, _charge)
from .protocol import AMPLITUDE_DEFAULT, Pulse, PulseTrain

# Counter-based generator, recorded in output metadata so streams are
# reproducible across platforms and worker counts.
GENERATOR_NAME = "numpy-philox4x64"
GENERATOR_VERSION = 1


class UncompensatableError(ValueError):
    """Pulse width never clears the dead zone; no count can hit the target."""


@dataclass(frozen=True, eq=False)
class BitStream:
    """Bernoulli pulse-position stream."""

    bits: np.ndarray   # bool, length n
    p: float           # target ON probability
    seed: int

    def __post_init__(self):
        if self.bits.size < 1:
            raise ValueError("bit stream must have length >= 1")

    @property
    def n(self) -> int:
        return int(self.bits.size)


@dataclass(frozen=True)
class UpdateErrorReport:
    n: int
    random_rel_err: float
    systematic_rel_err: float
    gap_noise_rel: float

    def __post_init__(self):
        if min(self.random_rel_err, self.systematic_rel_err, self.gap_noise_rel) < 0.0:
            raise ValueError("error components must be >= 0")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def encode(p: float, n: int, seed: int) -> BitStream:
    """Independent Bernoulli(p) bits from the named deterministic generator."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"probability must be in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"stream length must be >= 1, got {n}")
    bits = _rng(seed).random(n) < p
    bits.flags.writeable = False
    return BitStream(bits=bits, p=p, seed=int(seed))


def coincidence_update(x: BitStream, d: BitStream) -> int:
    """Number of slots where both streams are ON (pulses actually fired)."""
    if x.n != d.n:
        raise ValueError(f"stream lengths differ: {x.n} != {d.n}")
    return int(np.count_nonzero(x.bits & d.bits))


def _shift_from_slots(fire_idx, t_pw, base_gap, params: ModelParams) -> float:
    """Threshold shift from firing pulses at the given slot indices.

    Slots are t_pw of (possibly silent) active time plus base_gap of idle
    time; silent slots merely lengthen the effective gap between pulses.
    """
    if len(fire_idx) == 0:
        return 0.0
    pulse = Pulse(AMPLITUDE_DEFAULT, t_pw)
    slot = t_pw + base_gap
    state = DeviceState()
    prev = None
    for idx in fire_idx:
        if prev is not None:
            skipped = idx - prev - 1
            gap_after_prev = base_gap if skipped == 0 else skipped * slot + base_gap
            state = apply_pulse_deadzone(state, pulse, gap_after_prev, params)
        prev = idx
    state = apply_pulse_deadzone(state, pulse, base_gap, params)
    return vt_of(state, params) - params.VT0_V


def device_update(x: BitStream, d: BitStream, t_pw: float, base_gap: float,
                  params: ModelParams) -> float:
    """Threshold shift produced by one stochastic update on the device."""
    if x.n != d.n:
        raise ValueError(f"stream lengths differ: {x.n} != {d.n}")
    if not (t_pw > 0.0) or not (base_gap > 0.0):
        raise ValueError("t_pw and base_gap must be > 0")
    fire_idx = np.flatnonzero(x.bits & d.bits)
    return _shift_from_slots(fire_idx, t_pw, base_gap, params)


def error_decomposition(n_list, p_x: float, p_d: float, t_pw_of_n, params: ModelParams,
                        trials: int, seed: int, *, base_gap: float = 10.0,
                        placement_trials: int = 200) -> list:
    """Per-stream-length error report: random, systematic, and gap-noise
    components.

    Monte Carlo seeds are partitioned deterministically (base seed plus
    trial index), so results do not depend on how trials are scheduled.
    """
    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    if not (0.0 <= p_x <= 1.0 and 0.0 <= p_d <= 1.0):
        raise ValueError("probabilities must be in [0, 1]")
    p_eff = p_x * p_d
    reports = []
    for n in n_list:
        w = float(t_pw_of_n(n))
        # random: coincidence-count statistics over independent stream pairs
        counts = np.empty(trials)
        for t in range(trials):
            xs = encode(p_x, n, seed + 2 * t)
            ds = encode(p_d, n, seed + 2 * t + 1)
            counts[t] = coincidence_update(xs, ds)
        mean_c = counts.mean()
        random_rel = float(counts.std(ddof=1) / mean_c) if mean_c > 0 else 0.0

        # systematic: deterministic all-coincident train vs the single pulse
        # of equal total ON time (the ideal)
        dv_n = closed_form_vtn(n, w, base_gap, params) - params.VT0_V
        dv_1 = closed_form_vtn(1, n * w, base_gap, params) - params.VT0_V
        systematic = max(0.0, 1.0 - dv_n / dv_1) if dv_1 > 0.0 else 0.0

        # gap noise: shift spread across random placements at fixed count
        # (needs at least two placements for a spread estimate)
        k = int(round(n * p_eff))
        gap_noise = 0.0
        if 0 < k < n and placement_trials >= 2:
            shifts = np.empty(placement_trials)
            for t in range(placement_trials):
                rng = _rng(seed + 2 * trials + 1 + t)
                fire_idx = np.sort(rng.choice(n, size=k, replace=False))
                shifts[t] = _shift_from_slots(fire_idx, w, base_gap, params)
            mean_s = shifts.mean()
            gap_noise = float(shifts.std(ddof=1) / mean_s) if mean_s > 0 else 0.0
        reports.append(UpdateErrorReport(
            n=int(n), random_rel_err=random_rel,
            systematic_rel_err=systematic, gap_noise_rel=gap_noise))
    return reports


def compensated_schedule(t_pw: float, target_t_nv: float, params: ModelParams,
                         *, gap: float = 10.0,
                         amplitude: float = AMPLITUDE_DEFAULT) -> PulseTrain:
    """Pulse count that delivers a target effective write time.

    The count is the smallest one whose summed per-pulse contributions
    (width minus the entry-occupancy dead time) reach the target, so the
    overshoot is below one pulse quantum.
    """
    if not (t_pw > 0.0) or not (target_t_nv > 0.0):
        raise ValueError("t_pw and target_t_nv must be > 0")
    tau = params.tau_trap_eff
    # Feasibility at the steady-state entry occupancy: contributions only
    # grow along the train, so a dead steady state never accumulates.
    if tau > 0.0:
        a = math.exp(-t_pw / tau)
        d = math.exp(-gap / params.tau_detrap_s)
        u_star = d * (1.0 - a) / (1.0 - a * d)
        if t_pw <= dead_time(u_star, params):
            raise UncompensatableError(
                f"t_pw={t_pw:g}s never clears the dead zone "
                f"({dead_time(u_star, params):g}s at steady entry occupancy)")
    u = 0.0
    acc = 0.0
    count = 0
    decay = math.exp(-gap / params.tau_detrap_s)
    while acc < target_t_nv:
        acc += max(0.0, t_pw - dead_time(u, params))
        u = _charge(u, t_pw, tau) * decay
        count += 1
    return PulseTrain(Pulse(amplitude, t_pw), count, gap)

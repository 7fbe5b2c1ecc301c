"""Trap-timescale extraction from simulated (or user-supplied) sweep data.

Two timescales are pulled out of threshold-voltage data:

* the de-trapping time, estimated as the critical gap beyond which the
  final V_T,N of a train stops depending on the inter-pulse gap, and
* the per-pulse trapping (dead-zone) time, from the pulse budget needed
  to hit a target threshold: with n_req pulses of width t_pw reaching the
  target, the total applied time is t_pw * n_req while the effective
  non-volatile time T_NV comes from single-pulse data, leaving
  t_trap = t_pw - T_NV / n_req per pulse.

All interpolation is linear in log(time), matching how these quantities
are read off log-axis sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import VtTrace

TRAP_CSV_HEADER = "vt_tar_V,t_trap_s"
TCRIT_CSV_HEADER = "t_pw_s,t_crit_s"

DEFAULT_EPSILON = 5e-3    # saturation tolerance, V
DEFAULT_N_FIX = 200       # pulse-count intercept for the trap-time method
DEFAULT_MIN_TNV = 100e-6  # applicability guard for the one-shot method, s


class NotSaturatedError(ValueError):
    """Gap grid too short: the curve never settles to a plateau."""


class TargetUnreachableError(ValueError):
    def __init__(self, message, max_vt):
        super().__init__(message)
        self.max_vt = max_vt


class OutOfRangeError(ValueError):
    """Requested value lies outside the data range."""


class InconsistentInputsError(ValueError):
    """Pulse budget and effective write time disagree (negative trap time)."""


class ExtractionStepError(RuntimeError):
    """Failure inside a multi-step extraction, labeled with the step."""

    def __init__(self, step, cause):
        super().__init__(f"{step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class GapCurve:
    """Final V_T,N versus inter-pulse gap for one train."""

    points: tuple          # ((t_gap_s, vt_V), ...) with strictly increasing gaps
    n: int
    t_pw: float

    def __post_init__(self):
        pts = tuple((float(g), float(v)) for g, v in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 4:
            raise ValueError("gap curve needs at least 4 points")
        gaps = [g for g, _ in pts]
        if any(b <= a for a, b in zip(gaps, gaps[1:])):
            raise ValueError("gap values must be strictly increasing")
        if gaps[0] <= 0.0:
            raise ValueError("gap values must be > 0")
        if gaps[-1] / gaps[0] < 1e3:
            raise ValueError("gap curve must span at least 3 decades")

    @property
    def gaps(self):
        return np.array([g for g, _ in self.points])

    @property
    def vts(self):
        return np.array([v for _, v in self.points])


@dataclass(frozen=True)
class NreqCurve:
    """Required pulse count to reach a target threshold, per pulse width."""

    points: tuple          # ((t_pw_s, n_req), ...) sorted by increasing t_pw
    vt_tar: float

    def __post_init__(self):
        pts = tuple((float(w), int(n)) for w, n in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ValueError("n_req curve needs at least 2 points")
        ws = [w for w, _ in pts]
        ns = [n for _, n in pts]
        if any(b <= a for a, b in zip(ws, ws[1:])):
            raise ValueError("pulse widths must be strictly increasing")
        if any(b > a for a, b in zip(ns, ns[1:])):
            raise ValueError("n_req must be non-increasing in pulse width")


@dataclass(frozen=True)
class ExtractionReport:
    """Trap-time extraction for one target threshold, plus the shared
    critical-gap table."""

    vt_tar: float
    t_pw_200: float
    t_nv_s: float
    t_trap_s: float
    t_crit_by_tpw: tuple = ()       # ((t_pw_s, t_crit_s), ...)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t_trap_s < 0.0:
            raise ValueError("t_trap_s must be >= 0")
        if not (self.t_trap_s < self.t_pw_200):
            raise ValueError("t_trap_s must be smaller than t_pw_200")
        object.__setattr__(self, "t_crit_by_tpw",
                           tuple((float(w), float(t)) for w, t in self.t_crit_by_tpw))


def _log_interp(x_lo, x_hi, frac):
    return math.exp(math.log(x_lo) + frac * (math.log(x_hi) - math.log(x_lo)))


def detect_t_crit(curve: GapCurve, epsilon: float = DEFAULT_EPSILON) -> float:
    """Smallest gap beyond which the curve stays within epsilon of its plateau.

    The plateau is the mean over the largest decade of gaps; the result is
    log-interpolated between the last violating and first satisfying points.
    A curve that is flat everywhere returns its smallest gap.
    """
    if not (epsilon > 0.0):
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    gaps = curve.gaps
    vts = curve.vts
    top = gaps >= gaps[-1] / 10.0
    if np.count_nonzero(top) < 2:
        top[-2:] = True  # degenerate spacing: use the last two points
    sat = float(vts[top].mean())
    dev = np.abs(vts - sat)
    if np.all(dev >= epsilon):
        raise NotSaturatedError(
            f"no point within {epsilon:g} V of the plateau; gap grid too short")
    if np.any(dev[top] >= epsilon):
        raise NotSaturatedError(
            f"largest-decade points deviate from their own mean by >= {epsilon:g} V")
    ok = dev < epsilon
    idx = len(gaps) - 1
    while idx > 0 and ok[idx - 1]:
        idx -= 1
    if idx == 0:
        return float(gaps[0])
    frac = (dev[idx - 1] - epsilon) / (dev[idx - 1] - dev[idx])
    return _log_interp(gaps[idx - 1], gaps[idx], frac)


def n_required(trace: VtTrace, vt_tar: float) -> int:
    """Smallest sampled pulse index whose threshold reaches the target.

    Integer read-point quantization is accepted; no interpolation.
    """
    best = max(v for _, v in trace.entries)
    if best < vt_tar:
        raise TargetUnreachableError(
            f"target {vt_tar:g} V never reached (max {best:g} V)", max_vt=best)
    for i, v in trace.entries:
        if v >= vt_tar:
            return i
    raise AssertionError("unreachable")


def tpw_at_fixed_nreq(curve: NreqCurve, n_fix: int = DEFAULT_N_FIX) -> float:
    """Pulse width at which the curve crosses a fixed required count.

    Log-log interpolation between the bracketing points; an exact sample
    wins outright.
    """
    ws = [w for w, _ in curve.points]
    ns = [n for _, n in curve.points]
    for w, n in curve.points:
        if n == n_fix:
            return w
    if not (min(ns) <= n_fix <= max(ns)):
        raise OutOfRangeError(
            f"n_fix={n_fix} outside the curve range [{min(ns)}, {max(ns)}]")
    for i in range(len(ws) - 1):
        if ns[i] > n_fix > ns[i + 1]:
            frac = ((math.log(n_fix) - math.log(ns[i]))
                    / (math.log(ns[i + 1]) - math.log(ns[i])))
            return _log_interp(ws[i], ws[i + 1], frac)
    raise OutOfRangeError(f"no bracketing pair for n_fix={n_fix}")


def tnv_from_one_shot(one_shot, vt_tar: float,
                      min_tnv: float = DEFAULT_MIN_TNV) -> float:
    """Effective write time from single-pulse data: the width whose one-shot
    threshold equals the target.

    Valid when the pulse width dominates the trap time, which is enforced
    as a minimum returned value (``min_tnv``; pass 0 to disable).
    """
    pts = sorted((float(w), float(v)) for w, v in one_shot)
    if len(pts) < 2:
        raise ValueError("one-shot data needs at least 2 points")
    ws = [w for w, _ in pts]
    vs = [v for _, v in pts]
    if any(b < a for a, b in zip(vs, vs[1:])):
        raise ValueError("single-pulse V_T must be non-decreasing in pulse width")
    if not (vs[0] <= vt_tar <= vs[-1]):
        raise OutOfRangeError(
            f"target {vt_tar:g} V outside one-shot range [{vs[0]:g}, {vs[-1]:g}] V")
    tnv = float(np.exp(np.interp(vt_tar, vs, np.log(ws))))
    if tnv < min_tnv:
        raise OutOfRangeError(
            f"one-shot method not applicable: T_NV={tnv:g}s below the "
            f"{min_tnv:g}s guard")
    return tnv


def t_trap_from_counts(t_pw: float, t_nv: float, n_req: int) -> float:
    """Average per-pulse trap time from the pulse budget:
    t_trap = t_pw - T_NV / n_req."""
    if n_req < 1:
        raise ValueError(f"n_req must be >= 1, got {n_req}")
    if t_nv > t_pw * n_req:
        raise InconsistentInputsError(
            f"T_NV={t_nv:g}s exceeds the total applied time "
            f"{t_pw * n_req:g}s (negative trap time)")
    return t_pw - t_nv / n_req


def full_extraction(traces, one_shot, gap_curves, vt_targets, *,
                    n_fix: int = DEFAULT_N_FIX,
                    min_tnv: float = DEFAULT_MIN_TNV,
                    epsilon: float = DEFAULT_EPSILON,
                    metadata: dict | None = None) -> list:
    """Run the whole extraction pipeline; one report per target threshold.

    ``traces`` are intermediate-read runs at several pulse widths,
    ``one_shot`` is (t_pw, vt_1) single-pulse data, ``gap_curves`` feed the
    critical-gap table shared by every report.
    """
    traces = list(traces)
    widths = sorted({t.train.pulse.width for t in traces})
    if len(widths) < 4:
        raise ValueError(f"need traces at >= 4 pulse widths, got {len(widths)}")

    t_crit_table = []
    for curve in gap_curves:
        try:
            t_crit_table.append((curve.t_pw, detect_t_crit(curve, epsilon)))
        except ValueError as exc:
            raise ExtractionStepError(f"t_crit(t_pw={curve.t_pw:g}s)", exc) from exc
    t_crit_table.sort()

    base_meta = {
        "n_fix": n_fix,
        "min_tnv_s": min_tnv,
        "epsilon_V": epsilon,
        "read_timing": "threshold sampled at the inter-pulse boundary after each pulse",
    }
    if metadata:
        base_meta.update(metadata)

    reports = []
    for target in vt_targets:
        points = []
        for trace in sorted(traces, key=lambda t: t.train.pulse.width):
            try:
                points.append((trace.train.pulse.width, n_required(trace, target)))
            except TargetUnreachableError:
                continue  # this width never reaches the target; drop it
        try:
            curve = NreqCurve(points=tuple(points), vt_tar=target)
            tpw_fix = tpw_at_fixed_nreq(curve, n_fix)
            tnv = tnv_from_one_shot(one_shot, target, min_tnv)
            t_trap = t_trap_from_counts(tpw_fix, tnv, n_fix)
        except ValueError as exc:
            raise ExtractionStepError(f"target {target:g} V", exc) from exc
        # Pulse-budget identity: total applied time splits into effective
        # write time plus per-pulse trap time.
        t_tar = tpw_fix * n_fix
        if abs(t_tar - (tnv + n_fix * t_trap)) > 1e-12 * t_tar:
            raise ExtractionStepError(
                f"target {target:g} V",
                ValueError("pulse-budget identity violated beyond 1e-12 relative"))
        reports.append(ExtractionReport(
            vt_tar=float(target), t_pw_200=tpw_fix, t_nv_s=tnv, t_trap_s=t_trap,
            t_crit_by_tpw=tuple(t_crit_table), metadata=dict(base_meta)))
    return reports


def report_to_dict(report: ExtractionReport) -> dict:
    return {
        "vt_tar_V": report.vt_tar,
        "t_pw_200_s": report.t_pw_200,
        "T_NV_s": report.t_nv_s,
        "t_trap_s": report.t_trap_s,
        "t_crit_by_tpw": [[w, t] for w, t in report.t_crit_by_tpw],
        "metadata": dict(report.metadata),
    }

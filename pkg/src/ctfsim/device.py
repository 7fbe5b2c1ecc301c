"""Threshold-voltage dynamics of a charge-trap stack under pulse trains.

The stored charge in the trap layer sets the read-out threshold voltage
V_T through a logarithmic programming law. Injection into the trap layer
is throttled at the start of every pulse while shallow traps in the
blocking oxide charge up; those traps discharge again during the OFF
gaps. Two model variants are provided:

* ``deadzone`` -- each pulse contributes its width minus a hard dead
  time that depends on the blocking-oxide occupancy at pulse entry.
  First-order occupancy kinetics make this variant closed-form friendly.
* ``ode`` -- continuous injection current, exponential in a lumped
  effective field that rises with blocking-oxide occupancy and falls
  with stored trap-layer charge. Integrated by explicit time stepping.

Occupancy kinetics (both variants): during ON the occupancy u relaxes
toward 1 with time constant tau_trap' = tau_trap_s * bo_scale *
(1 + to_sens) * (1 + ctl_sens); during OFF it decays to 0 with time
constant tau_detrap_s. The occupancy is invisible at read time: V_T
depends only on the accumulated non-volatile write time (variant A) or
the stored trap-layer charge (variant B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .protocol import Pulse, PulseTrain


class NumericFailure(RuntimeError):
    """Time-step refinement failed to converge."""


class SplitNormalizationError(ValueError):
    """Process splits are not programmed to a common single-pulse V_T."""

    def __init__(self, label, message):
        super().__init__(message)
        self.label = label


PARAM_KEYS = ("tau_trap_s", "tau_detrap_s", "u_c", "A_V", "t0_s",
              "VT0_V", "VTmax_V", "bo_scale", "to_sens", "ctl_sens")


@dataclass(frozen=True)
class ModelParams:
    """Device model parameters.

    tau_trap_s    blocking-oxide trapping time constant at program bias
    tau_detrap_s  blocking-oxide de-trapping time constant at zero bias
    u_c           critical occupancy ending the per-pulse dead zone
    A_V           log-programming slope
    t0_s          log-programming reference time
    VT0_V         erased (initialized) threshold voltage
    VTmax_V       programming saturation clamp
    bo_scale      blocking-oxide thickness factor (1.0 = base stack)
    to_sens       tunnel-oxide split sensitivity (0 = insensitive)
    ctl_sens      trap-layer split sensitivity (0 = insensitive)
    """

    tau_trap_s: float
    tau_detrap_s: float
    u_c: float
    A_V: float
    t0_s: float
    VT0_V: float
    VTmax_V: float
    bo_scale: float = 1.0
    to_sens: float = 0.0
    ctl_sens: float = 0.0

    def __post_init__(self):
        if self.tau_trap_s < 0.0:
            raise ValueError(f"tau_trap_s must be >= 0, got {self.tau_trap_s}")
        if not (self.tau_detrap_s > 0.0):
            raise ValueError(f"tau_detrap_s must be > 0, got {self.tau_detrap_s}")
        if not (0.0 < self.u_c < 1.0):
            raise ValueError(f"u_c must be in (0, 1), got {self.u_c}")
        if not (self.A_V > 0.0):
            raise ValueError(f"A_V must be > 0, got {self.A_V}")
        if not (self.t0_s > 0.0):
            raise ValueError(f"t0_s must be > 0, got {self.t0_s}")
        if not (self.VT0_V < self.VTmax_V):
            raise ValueError(f"VT0_V must be < VTmax_V, got {self.VT0_V} >= {self.VTmax_V}")
        if not (self.bo_scale > 0.0):
            raise ValueError(f"bo_scale must be > 0, got {self.bo_scale}")

    @property
    def tau_trap_eff(self) -> float:
        """Trapping time constant including stack-split scaling."""
        return (self.tau_trap_s * self.bo_scale
                * (1.0 + self.to_sens) * (1.0 + self.ctl_sens))

    def with_bo_scale(self, bo_scale: float) -> "ModelParams":
        return replace(self, bo_scale=bo_scale)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in PARAM_KEYS}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        return cls(**{k: float(doc[k]) for k in PARAM_KEYS})


@dataclass(frozen=True)
class OdeParams:
    """Lumped injection-current parameters for the ODE variant.

    j0     current prefactor, threshold volts per second
    beta   tunneling exponent constant, V
    kappa  field enhancement per unit blocking-oxide occupancy
    eta    field reduction per volt of stored trap-layer charge
    """

    j0: float
    beta: float
    kappa: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if not (self.j0 > 0.0):
            raise ValueError(f"j0 must be > 0, got {self.j0}")
        if not (self.beta > 0.0):
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.kappa < 0.0 or self.eta < 0.0:
            raise ValueError("kappa and eta must be >= 0")

    def to_dict(self) -> dict:
        return {"j0": float(self.j0), "beta": float(self.beta),
                "kappa": float(self.kappa), "eta": float(self.eta)}

    @classmethod
    def from_dict(cls, doc: dict) -> "OdeParams":
        return cls(j0=float(doc["j0"]), beta=float(doc["beta"]),
                   kappa=float(doc.get("kappa", 0.0)), eta=float(doc.get("eta", 0.0)))


@dataclass(frozen=True)
class DeviceState:
    """Value object: blocking-oxide occupancy plus accumulated write state."""

    u: float = 0.0        # blocking-oxide trap occupancy in [0, 1]
    t_nv_s: float = 0.0   # accumulated non-volatile write time (variant A)
    q_ctl: float = 0.0    # stored trap-layer charge, threshold volts (variant B)
    clock_s: float = 0.0  # simulated elapsed time

    def __post_init__(self):
        if not (0.0 <= self.u <= 1.0):
            raise ValueError(f"occupancy must be in [0, 1], got {self.u}")
        if self.t_nv_s < 0.0:
            raise ValueError(f"t_nv_s must be >= 0, got {self.t_nv_s}")


@dataclass(frozen=True)
class VtTrace:
    """Threshold-voltage samples versus pulse number for one train."""

    entries: tuple            # ((pulse_index, vt_V), ...)
    params_used: ModelParams
    train: PulseTrain

    def __post_init__(self):
        object.__setattr__(self, "entries",
                           tuple((int(i), float(v)) for i, v in self.entries))
        if not self.entries or self.entries[0][0] != 0:
            raise ValueError("trace must start at pulse index 0")
        idx = [i for i, _ in self.entries]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("trace pulse indices must be strictly increasing")

    @property
    def pulse_numbers(self):
        return tuple(i for i, _ in self.entries)

    @property
    def vt_values(self):
        return tuple(v for _, v in self.entries)

    @property
    def final_vt(self) -> float:
        return self.entries[-1][1]


@dataclass(frozen=True)
class SweepResult:
    """V_T,N grid over pulse counts for a set of process splits."""

    labels: tuple
    n_values: tuple
    vt: dict              # label -> tuple of V_T,N aligned with n_values
    vt1: dict             # label -> single-pulse V_T used for normalization

    def vtn(self, label, n) -> float:
        return self.vt[label][self.n_values.index(n)]

    def reduction_at(self, n) -> dict:
        """Drop of V_T,N below the single-pulse value, per split."""
        return {lab: self.vt1[lab] - self.vtn(lab, n) for lab in self.labels}


# ---------------------------------------------------------------------------
# Variant A: hard dead zone
# ---------------------------------------------------------------------------

def dead_time(u0: float, params: ModelParams) -> float:
    """Time for the blocking-oxide occupancy to charge from u0 to u_c.

    Injection into the trap layer is suppressed for this initial portion
    of a pulse. Zero once the entry occupancy is already past u_c.
    """
    if not (0.0 <= u0 <= 1.0):
        raise ValueError(f"occupancy must be in [0, 1], got {u0}")
    tau = params.tau_trap_eff
    if tau == 0.0 or u0 >= params.u_c:
        return 0.0
    return tau * math.log((1.0 - u0) / (1.0 - params.u_c))


def _charge(u0: float, width: float, tau: float) -> float:
    # First-order relaxation toward full occupancy during ON time.
    if tau == 0.0:
        return 1.0
    return 1.0 - (1.0 - u0) * math.exp(-width / tau)


def apply_pulse_deadzone(state: DeviceState, pulse: Pulse, gap_after: float,
                         params: ModelParams) -> DeviceState:
    """Advance the state through one pulse and the OFF gap that follows.

    The pulse contributes max(0, width - dead_time) of non-volatile write
    time; the occupancy charges during ON and decays during the gap.
    """
    tnv = state.t_nv_s + max(0.0, pulse.width - dead_time(state.u, params))
    u = _charge(state.u, pulse.width, params.tau_trap_eff)
    u *= math.exp(-gap_after / params.tau_detrap_s)
    return DeviceState(u=u, t_nv_s=tnv, q_ctl=state.q_ctl,
                       clock_s=state.clock_s + pulse.width + gap_after)


def vt_of(state: DeviceState, params: ModelParams, variant: str = "deadzone") -> float:
    """Read-out threshold voltage; blind to the blocking-oxide occupancy."""
    if variant == "deadzone":
        vt = params.VT0_V + params.A_V * math.log(1.0 + state.t_nv_s / params.t0_s)
    elif variant == "ode":
        vt = params.VT0_V + state.q_ctl
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return min(params.VTmax_V, vt)


def _trace_indices(train: PulseTrain):
    # Sampled at every requested read point; endpoints always included.
    return sorted(set(train.read_points) | {0, train.count})


def run_train(train: PulseTrain, params: ModelParams, variant: str = "deadzone",
              *, ode: OdeParams | None = None, dt_max: float | None = None) -> VtTrace:
    """Simulate a full train starting from a freshly initialized device."""
    if variant == "ode":
        if ode is None:
            raise ValueError("variant 'ode' requires OdeParams")
        if dt_max is None:
            dt_max = train.pulse.width / 50.0
        return run_train_ode(train, params, ode, dt_max)
    if variant != "deadzone":
        raise ValueError(f"unknown variant {variant!r}")

    wanted = _trace_indices(train)
    state = DeviceState()
    entries = [(0, vt_of(state, params))]
    pos = 1  # wanted[0] == 0 already emitted
    for i in range(1, train.count + 1):
        state = apply_pulse_deadzone(state, train.pulse, train.gap, params)
        if i == wanted[pos]:
            entries.append((i, vt_of(state, params)))
            pos += 1
    return VtTrace(entries=tuple(entries), params_used=params, train=train)


def closed_form_vtn(n: int, t_pw: float, t_gap: float, params: ModelParams) -> float:
    """Final V_T,N of a uniform train without stepping pulse by pulse.

    The per-pulse entry occupancy follows the affine recurrence
    u_{i+1} = (1 - (1 - u_i) e^{-t_pw/tau'}) e^{-t_gap/tau_detrap}, whose
    solution is geometric convergence to a fixed point; the non-volatile
    write time is summed exactly over that solution.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not (t_pw > 0.0) or t_gap < 0.0:
        raise ValueError("t_pw must be > 0 and t_gap >= 0")
    tau = params.tau_trap_eff
    if tau == 0.0:
        tnv = n * t_pw
    else:
        a = math.exp(-t_pw / tau)
        d = math.exp(-t_gap / params.tau_detrap_s)
        if a >= 1.0:
            # Charging underflows entirely (t_pw many orders below tau'):
            # the occupancy never leaves zero, matching the stepped path.
            tnv = n * max(0.0, t_pw - dead_time(0.0, params))
            return vt_of(DeviceState(t_nv_s=tnv), params)
        alpha = a * d
        # a < 1 strictly, so the fixed point is well defined.
        ustar = d * (1.0 - a) / (1.0 - alpha)
        # Entry occupancies converge geometrically; once alpha**i drops
        # below 1 ulp the remaining pulses sit exactly at the fixed point,
        # so only the transient needs elementwise treatment.
        if alpha <= 0.0:
            n_exact = 1
        else:
            n_exact = min(n, max(1, math.ceil(-41.0 / math.log(alpha))))
        u = ustar * (1.0 - alpha ** np.arange(n_exact))
        with np.errstate(divide="ignore"):
            dead = np.where(u < params.u_c,
                            tau * np.log((1.0 - u) / (1.0 - params.u_c)), 0.0)
        tnv = float(np.sum(np.clip(t_pw - dead, 0.0, None)))
        if n > n_exact:
            dead_star = dead_time(ustar, params)
            tnv += (n - n_exact) * max(0.0, t_pw - dead_star)
    return vt_of(DeviceState(t_nv_s=tnv), params)


# ---------------------------------------------------------------------------
# Variant B: continuous injection ODE
# ---------------------------------------------------------------------------

def _injection_rate(j0, beta, field):
    if field <= 0.0:
        return 0.0
    return j0 * math.exp(-beta / field)


def _ode_pass(train: PulseTrain, params: ModelParams, ode: OdeParams, dt: float):
    """One fixed-step integration of the whole train; returns the trace entries."""
    tau = params.tau_trap_eff
    taud = params.tau_detrap_s
    w = train.pulse.width
    v_eff = train.pulse.amplitude
    nst = max(1, math.ceil(w / dt))
    h = w / nst
    if tau > 0.0:
        decay_h = math.exp(-0.5 * h / tau)
        decay_full = decay_h * decay_h
    gap_factor = math.exp(-train.gap / taud)
    j0, beta, kappa, eta = ode.j0, ode.beta, ode.kappa, ode.eta

    wanted = _trace_indices(train)
    u = 0.0
    q = 0.0
    entries = [(0, vt_of(DeviceState(), params, "ode"))]
    pos = 1
    for i in range(1, train.count + 1):
        for _ in range(nst):
            if tau > 0.0:
                one_m_u = 1.0 - u
                u_half = 1.0 - one_m_u * decay_h
                u_full = 1.0 - one_m_u * decay_full
            else:
                u_half = u_full = 1.0
            # classic RK4 on dq/dt = j0 exp(-beta / (V + kappa u(t) - eta q))
            k1 = _injection_rate(j0, beta, v_eff + kappa * u - eta * q)
            k2 = _injection_rate(j0, beta, v_eff + kappa * u_half - eta * (q + 0.5 * h * k1))
            k3 = _injection_rate(j0, beta, v_eff + kappa * u_half - eta * (q + 0.5 * h * k2))
            k4 = _injection_rate(j0, beta, v_eff + kappa * u_full - eta * (q + h * k3))
            q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            u = u_full
        u *= gap_factor
        if i == wanted[pos]:
            entries.append((i, vt_of(DeviceState(q_ctl=q), params, "ode")))
            pos += 1
    return entries


def run_train_ode(train: PulseTrain, params: ModelParams, ode: OdeParams,
                  dt_max: float) -> VtTrace:
    """ODE-variant simulation with step-halving refinement.

    The step is halved until two successive refinements agree on the final
    threshold to better than 1e-6 V; the finer result is returned.
    """
    w = train.pulse.width
    if not (0.0 < dt_max <= w / 20.0):
        raise ValueError(f"dt_max must be in (0, t_pw/20], got {dt_max}")
    prev = None
    dt = dt_max
    for _ in range(21):  # initial pass + up to 20 halvings
        entries = _ode_pass(train, params, ode, dt)
        if prev is not None and abs(entries[-1][1] - prev[-1][1]) < 1e-6:
            return VtTrace(entries=tuple(entries), params_used=params, train=train)
        prev = entries
        dt *= 0.5
    raise NumericFailure(
        f"ODE refinement did not converge after 20 halvings (train N={train.count}, "
        f"t_pw={w:g}s)")


# ---------------------------------------------------------------------------
# Process-split sweeps
# ---------------------------------------------------------------------------

VT1_NORMALIZATION_TOL = 5e-3  # splits must share the single-pulse V_T to 5 mV


def split_sweep(splits, n_list, t_on: float, *, gap: float = 10.0) -> SweepResult:
    """Fragmentation sweep over several process splits at fixed T_ON.

    ``splits`` is an ordered list of (label, ModelParams). All splits must
    be programmed to the same single-pulse V_T (checked to 5 mV), mirroring
    the per-split bias normalization done on hardware.
    """
    splits = list(splits)
    if not splits:
        raise ValueError("splits must not be empty")
    n_list = [int(n) for n in n_list]
    labels = tuple(lab for lab, _ in splits)
    vt1 = {}
    for lab, p in splits:
        vt1[lab] = closed_form_vtn(1, t_on, gap, p)
    ref = vt1[labels[0]]
    for lab in labels:
        if abs(vt1[lab] - ref) > VT1_NORMALIZATION_TOL:
            raise SplitNormalizationError(
                lab, f"split {lab!r}: single-pulse V_T deviates by "
                     f"{abs(vt1[lab] - ref):.4g} V (> {VT1_NORMALIZATION_TOL:g} V)")
    vt = {}
    for lab, p in splits:
        vt[lab] = tuple(closed_form_vtn(n, t_on / n, gap, p) for n in n_list)
    return SweepResult(labels=labels, n_values=tuple(n_list), vt=vt, vt1=vt1)


# ---------------------------------------------------------------------------
# Parameter file I/O (field names are part of the file format)
# ---------------------------------------------------------------------------

def save_params(params: ModelParams, path, *, ode: OdeParams | None = None,
                version: int = 1) -> None:
    doc = {"version": version}
    doc.update(params.to_dict())
    if ode is not None:
        doc["ode"] = ode.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, default_flow_style=False, sort_keys=False)


def load_params(path) -> tuple[ModelParams, OdeParams | None]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: parameter document must be a mapping")
    params = ModelParams.from_dict(doc)
    ode = OdeParams.from_dict(doc["ode"]) if "ode" in doc else None
    return params, ode

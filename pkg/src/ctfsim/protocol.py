"""Program pulse trains and experiment schedules.

A programming experiment applies a total ON time T_ON split into N
rectangular pulses of width t_pw separated by a fixed OFF gap t_gap.
Rise/fall edges are metadata only and never count toward ON time.
All times are seconds, all biases volts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import yaml

# Standard experiment grid: pulse counts used for the fixed-T_ON sweeps.
TABLE1_N = (1, 10, 25, 50, 100, 500, 1000, 2000, 5000, 10000)
T_ON_DEFAULT = 2.5e-3
AMPLITUDE_DEFAULT = 12.5
RISE_FALL_DEFAULT = 150e-9
GAP_DEFAULT = 10.0

# Default gap sweep: one point per decade, 100 ns .. 10 s.
GAP_GRID_DEFAULT = tuple(10.0 ** k for k in range(-7, 2))

INIT_MARKER = "init"


@dataclass(frozen=True)
class Pulse:
    """One rectangular program pulse."""

    amplitude: float                     # program bias, V
    width: float                         # ON time, s
    rise_fall: float = RISE_FALL_DEFAULT  # edge time, s; excluded from ON time

    def __post_init__(self):
        if not (self.width > 0.0) or not math.isfinite(self.width):
            raise ValueError(f"pulse width must be > 0, got {self.width}")
        if not math.isfinite(self.amplitude):
            raise ValueError(f"pulse amplitude must be finite, got {self.amplitude}")
        if self.rise_fall < 0.0:
            raise ValueError(f"rise/fall time must be >= 0, got {self.rise_fall}")


@dataclass(frozen=True)
class PulseTrain:
    """N identical pulses with a fixed inter-pulse gap.

    ``read_points`` lists the pulse indices (0 = before the first pulse,
    N = after the last) at which the threshold voltage is sampled.
    """

    pulse: Pulse
    count: int
    gap: float
    read_points: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.count, int) or self.count < 1:
            raise ValueError(f"pulse count must be an integer >= 1, got {self.count}")
        if self.gap < 0.0 or not math.isfinite(self.gap):
            raise ValueError(f"gap must be >= 0 and finite, got {self.gap}")
        object.__setattr__(self, "read_points", tuple(int(i) for i in self.read_points))
        _check_read_points(self.read_points, self.count)

    @property
    def t_on(self) -> float:
        """Total ON time of the train (count x width)."""
        return self.count * self.pulse.width

    def with_gap(self, gap: float) -> "PulseTrain":
        return replace(self, gap=gap)


def _check_read_points(points, count):
    prev = -1
    for i in points:
        if i <= prev:
            raise ValueError(f"read points must be strictly increasing, got {points}")
        if i < 0 or i > count:
            raise ValueError(f"read point {i} outside [0, {count}]")
        prev = i


@dataclass(frozen=True)
class ExperimentSchedule:
    """Ordered sequence of initialization markers and pulse trains.

    Initialization resets the device to its erased threshold; every train
    must be preceded (not necessarily immediately) by an init marker.
    """

    trains: tuple = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trains", tuple(self.trains))
        initialized = False
        for step in self.trains:
            if step == INIT_MARKER:
                initialized = True
            elif isinstance(step, PulseTrain):
                if not initialized:
                    raise ValueError(
                        f"schedule {self.label!r}: pulse train before any {INIT_MARKER!r} marker"
                    )
            else:
                raise ValueError(f"schedule step must be {INIT_MARKER!r} or PulseTrain, got {step!r}")

    def pulse_trains(self) -> list[PulseTrain]:
        return [s for s in self.trains if isinstance(s, PulseTrain)]


def table1_trains(t_on: float, n_list, gap: float, *,
                  amplitude: float = AMPLITUDE_DEFAULT) -> list[PulseTrain]:
    """Build the fixed-T_ON fragmentation grid: one train per pulse count.

    Each train has count = N and width = t_on / N, so every train applies
    the same total ON time.
    """
    if not (t_on > 0.0):
        raise ValueError(f"t_on must be > 0, got {t_on}")
    n_list = list(n_list)
    if not n_list:
        raise ValueError("n_list must not be empty")
    trains = []
    for n in n_list:
        if not isinstance(n, int) or n < 1:
            raise ValueError(f"pulse counts must be integers >= 1, got {n}")
        trains.append(PulseTrain(Pulse(amplitude, t_on / n), n, gap))
    return trains


def gap_sweep(train: PulseTrain, gaps) -> list[PulseTrain]:
    """Clone a train across a list of gaps, order preserved."""
    gaps = list(gaps)
    if not gaps:
        raise ValueError("gaps must not be empty")
    for g in gaps:
        if g < 0.0:
            raise ValueError(f"gaps must be >= 0, got {g}")
    return [train.with_gap(g) for g in gaps]


def with_intermediate_reads(train: PulseTrain, indices) -> PulseTrain:
    """Attach read points to a train; pulse timing is unchanged."""
    indices = tuple(int(i) for i in indices)
    _check_read_points(indices, train.count)
    return replace(train, read_points=indices)


def log_read_points(count: int, per_decade: int = 10) -> tuple[int, ...]:
    """Roughly log-spaced read indices from 0 to count, endpoints included."""
    if count < 1:
        raise ValueError("count must be >= 1")
    pts = {0, count}
    n = 1.0
    ratio = 10.0 ** (1.0 / per_decade)
    while n < count:
        pts.add(int(round(n)))
        n *= ratio
    return tuple(sorted(pts))


# ---------------------------------------------------------------------------
# Protocol file format (YAML): one document per schedule.
# Field names are fixed: amplitude_V, t_pw_s, N, t_gap_s, reads, label.
# Times are seconds as decimal floats.
# ---------------------------------------------------------------------------

def train_to_dict(train: PulseTrain) -> dict:
    return {
        "amplitude_V": float(train.pulse.amplitude),
        "t_pw_s": float(train.pulse.width),
        "N": int(train.count),
        "t_gap_s": float(train.gap),
        "reads": [int(i) for i in train.read_points],
        "rise_fall_s": float(train.pulse.rise_fall),
    }


def train_from_dict(doc: dict) -> PulseTrain:
    pulse = Pulse(
        amplitude=float(doc["amplitude_V"]),
        width=float(doc["t_pw_s"]),
        rise_fall=float(doc.get("rise_fall_s", RISE_FALL_DEFAULT)),
    )
    return PulseTrain(
        pulse=pulse,
        count=int(doc["N"]),
        gap=float(doc["t_gap_s"]),
        read_points=tuple(doc.get("reads", ())),
    )


def schedule_to_dict(schedule: ExperimentSchedule) -> dict:
    steps = []
    for step in schedule.trains:
        steps.append(INIT_MARKER if step == INIT_MARKER else train_to_dict(step))
    return {"label": schedule.label, "trains": steps}


def schedule_from_dict(doc: dict) -> ExperimentSchedule:
    steps = []
    for entry in doc.get("trains", []):
        if entry == INIT_MARKER:
            steps.append(INIT_MARKER)
        else:
            steps.append(train_from_dict(entry))
    return ExperimentSchedule(trains=tuple(steps), label=str(doc.get("label", "")))


def save_schedule(schedule: ExperimentSchedule, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(schedule_to_dict(schedule), fh, default_flow_style=False, sort_keys=False)


def load_schedule(path) -> ExperimentSchedule:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: protocol document must be a mapping")
    return schedule_from_dict(doc)

"""Behavioral simulator for charge-trap flash programming under fragmented pulse trains.

The package models how the programmed threshold voltage of a charge-trap
transistor degrades when a fixed total write time is split into many short
pulses, extracts the blocking-oxide trapping/de-trapping timescales that
cause the degradation, and quantifies the resulting weight-update errors
for stochastic-bitstream in-memory training.
"""

__version__ = "0.1.0"

# Fixed build stamp used in all delimited output so that reruns with
# identical inputs are byte-identical. Wall-clock times live in the run
# manifest only.
BUILD_STAMP = "2026-08-10T00:00:00+00:00"

from .protocol import (  # noqa: F401
    Pulse,
    PulseTrain,
    ExperimentSchedule,
    table1_trains,
    gap_sweep,
    with_intermediate_reads,
)
from .device import (  # noqa: F401
    ModelParams,
    OdeParams,
    DeviceState,
    VtTrace,
    SweepResult,
    dead_time,
    apply_pulse_deadzone,
    vt_of,
    run_train,
    run_train_ode,
    closed_form_vtn,
    split_sweep,
)
from .calibration import AnchorSet, FitResult, default_params, default_ode_params  # noqa: F401

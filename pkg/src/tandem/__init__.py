"""Tandem leader/follower colonoscope training simulator.

The preceptor's control-wheel motion is streamed to motors that drive the
trainee's wheels. A mode flag switches the follower between active
compliance and preceptor guidance, and a fixed-rate deterministic loop
records every cycle into a replayable trace for metrics.
"""

__version__ = "0.1.0"

from .arbitration import (
    ArbitrationConfig,
    ArbitrationEvent,
    ArbitrationState,
    EventKind,
    OnsetLatch,
    arbitrate,
    detect_motion_onset,
    guidance_trigger_check,
)
from .controller import (
    ControllerConfig,
    GainSchedule,
    MotorCommand,
    PidGains,
    PidState,
    compliance_reference,
    guidance_reference,
    on_mode_transition,
    pid_step,
    select_gains,
)
from .kinematics import (
    EncoderConfig,
    GearTrain,
    WheelId,
    WheelReading,
    counts_to_angle,
    quantize_angle,
    wheel_delta_to_motor_delta,
)
from .loop import run, run_tethered
from .metrics import (
    LearningFit,
    TrialRecord,
    completion_time,
    fit_learning_line,
    group_average_improvement,
    normalize_times,
    path_length,
    percent_improvement,
)
from .plant import ColonModel, PlantConfig, PlantState, normal_loop
from .scenario import Scenario, load_scenario, scenario_from_dict
from .session import SessionTrace, TickRecord, read_trace, replay, write_trace

"""Frame-based priority scheduling and power control for multi-class M/G/1 queues."""

from .analytic import (
    DelayRegion,
    LoadProfile,
    PriorityOrder,
    conservation_value,
    delay_region,
    expected_arrivals_per_frame,
    expected_frame_size,
    load_profile,
    priority_delays,
)
from .core import (
    ClassParams,
    JobSizeDist,
    PenaltyFn,
    RatePowerFn,
    RunningStats,
    SystemConfig,
    average_delay,
    average_delays,
    average_power,
    load_config,
    save_config,
)
from .errors import (
    CapabilityError,
    DataIntegrityError,
    DivergenceError,
    InfeasibleError,
    UnstableConfigError,
)
from .policies import FrameDecision, Policy
from .simulator import run, run_replications
from .virtual_queues import VirtualState

__version__ = "0.1.0"

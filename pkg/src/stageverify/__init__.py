"""Stage verification engine for manual assembly.

Fuses timestamped observation streams (object detections with depth, hand
keypoints, remote screw-hole reports, part orientation) on a fixed tick grid
and drives a finite state machine through a declarative assembly plan,
emitting correction guidance and operation reports.
"""

from .model import (
    ActionConfidence,
    ActionLabel,
    Detection,
    DetectionFrame,
    ObjAngle,
    PartClass,
    ThresholdConfig,
    canonicalize_angle,
    circ_diff,
)
from .plan import AssemblyPlan, Region, StageKind, StageSpec, builtin_hdd_plan, validate_plan
from .fsm import FusedObservation, Phase, VerifierState, initial_state, step
from .session import OperationReport, run_replay
from .simulate import SCENARIOS, simulate_scenario

__version__ = "0.1.0"

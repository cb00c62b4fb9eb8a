"""Scripted scene generator: road templates, bicycle-model target, labels."""
from .dataset import (
    ABNORMAL_SHARE,
    BENCHMARK_ABNORMAL,
    allocate,
    build_scene,
    default_config,
    generate_dataset,
    load_config,
    mini_benchmark_config,
    plan_jobs,
)
from .geometry import Path
from .kinematics import (
    A_MAX,
    STEER_MAX,
    V_MAX,
    WHEELBASE,
    ControlCommand,
    VehicleState,
    step_kinematics,
    track_reference,
    wrap_angle,
)
from .scripts import (
    COMPATIBLE,
    Companion,
    ManeuverScript,
    WorldSpec,
    generate_scene,
    label_frames,
    lateral_offset,
    plan_scene,
    target_reference,
    tracking_error,
)
from .worlds import LANE_WIDTH, TEMPLATES, RigidTransform, RoadTemplate, road_template

__all__ = [
    "ABNORMAL_SHARE",
    "BENCHMARK_ABNORMAL",
    "A_MAX",
    "COMPATIBLE",
    "Companion",
    "ControlCommand",
    "LANE_WIDTH",
    "ManeuverScript",
    "Path",
    "RigidTransform",
    "RoadTemplate",
    "STEER_MAX",
    "TEMPLATES",
    "V_MAX",
    "VehicleState",
    "WHEELBASE",
    "WorldSpec",
    "allocate",
    "build_scene",
    "default_config",
    "generate_dataset",
    "generate_scene",
    "label_frames",
    "lateral_offset",
    "load_config",
    "mini_benchmark_config",
    "plan_jobs",
    "plan_scene",
    "road_template",
    "step_kinematics",
    "target_reference",
    "tracking_error",
    "wrap_angle",
]

"""GPS / LiDAR-inertial odometry fusion with a per-axis uncertainty gate."""

from .ekf import Ekf15, Measurement
from .gate import GatedPose, GateThresholds, UncertaintyDiag, detect_dropout_intervals, gate
from .geodesy import GeoFix, UtmCoord, latlon_to_utm, utm_to_latlon
from .pipeline import FusedTrajectory, PipelineConfig, run
from .simulator import Scenario, simulate

__version__ = "0.1.0"

__all__ = [
    "Ekf15", "Measurement", "GatedPose", "GateThresholds", "UncertaintyDiag",
    "detect_dropout_intervals", "gate", "GeoFix", "UtmCoord", "latlon_to_utm", "utm_to_latlon",
    "FusedTrajectory", "PipelineConfig", "run", "Scenario", "simulate",
]

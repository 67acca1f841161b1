"""Trajectory forecasting from identity-free detections, on synthetic ORCA crowds."""
from .dataio import DetectionWindow, TrajectorySequence, load_tsv, make_windows, prepare, save_tsv
from .model import Det2TrajFormer, ModelConfig, load_checkpoint, save_checkpoint
from .sim import ScenarioConfig, generate_scenario, rollout, simulate

__version__ = "0.1.0"

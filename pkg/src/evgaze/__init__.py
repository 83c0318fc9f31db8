"""Hybrid frame/event pupil tracking with online least-squares conic fits."""
from .fitter import FitConfig, FitState, Membership
from .frames import FramePipelineConfig
from .gaze import GazeMap, ScreenGeometry, calibrate, map_gaze
from .model import CircleParams, EllipseParams, Event, EyeModel, Frame, ParabolaParams
from .tracker import BlinkConfig, TrackerConfig, TrackResult, Tracker, process_stream

__all__ = [
    "BlinkConfig", "CircleParams", "EllipseParams", "Event", "EyeModel", "FitConfig", "FitState",
    "Frame", "FramePipelineConfig", "GazeMap", "Membership", "ParabolaParams", "ScreenGeometry",
    "TrackResult", "Tracker", "TrackerConfig", "calibrate", "map_gaze", "process_stream",
]

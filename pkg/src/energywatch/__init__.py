"""Detect energy-consumption attacks on smart-home devices from packet reception rates."""

__version__ = "0.1.0"

from .baseline import BaselineProfile, DeviceStatus, default_profile, learn_baseline, threshold_for
from .detector import Detector, DetectionEvent, DetectionState, EventKind, Verdict, evaluate_slot
from .ingest import Kind, PacketEvent, Protocol, Scope, SourceConfig, SourceKind, open_source
from .pipeline import Monitor, MonitorConfig

__all__ = [
    "BaselineProfile",
    "DetectionEvent",
    "DetectionState",
    "Detector",
    "DeviceStatus",
    "EventKind",
    "Kind",
    "Monitor",
    "MonitorConfig",
    "PacketEvent",
    "Protocol",
    "Scope",
    "SourceConfig",
    "SourceKind",
    "Verdict",
    "default_profile",
    "evaluate_slot",
    "learn_baseline",
    "open_source",
    "threshold_for",
]

"""Validation studies.

Available studies:
- sensitivity: metric value versus rope-length error
- detection: breach counts versus velocity deficit
- estimation: v_max recovery per initial-guess policy
"""

from .base import BaseStudy
from .detection import DetectionStudy
from .estimation import EstimationStudy
from .sensitivity import SensitivityStudy

__all__ = [
    "BaseStudy",
    "SensitivityStudy",
    "DetectionStudy",
    "EstimationStudy",
]

# Study registry for the CLI
STUDIES = {
    "sensitivity": SensitivityStudy,
    "detection": DetectionStudy,
    "estimation": EstimationStudy,
}

"""Hyperspectral image classification with spatial context and rejection.

Pipeline: a multinomial logistic regression turns pixel spectra into a
per-pixel probability field; a convex hidden-field segmentation with a
vector total-variation prior injects spatial context; the maximum of
each hidden-field column orders pixels by contextual confidence so any
rejected fraction can be applied or re-chosen without resolving.
"""

from .fields import (
    HiddenField,
    HyperCube,
    LabelMap,
    Labeling,
    ProbabilityField,
    RejectionField,
    RejectMask,
    argmax_labeling,
    rejection_field,
)
from .io import DatasetBundle, SplitIndices, SplitSpec, make_splits
from .metrics import RejectionReport, classification_quality, full_report, nonrejected_accuracy
from .mlr import MlrModel, predict_probs, train_mlr
from .rejection import estimate_optimal_fraction, reject_at_fraction, sweep_fractions
from .solver import VtvParams, solve_hidden_field
from .synth import SynthSpec, generate

__all__ = [
    "HiddenField", "HyperCube", "LabelMap", "Labeling", "ProbabilityField",
    "RejectionField", "RejectMask", "argmax_labeling", "rejection_field",
    "DatasetBundle", "SplitIndices", "SplitSpec", "make_splits",
    "RejectionReport", "classification_quality", "full_report",
    "nonrejected_accuracy", "MlrModel", "predict_probs", "train_mlr",
    "estimate_optimal_fraction", "reject_at_fraction", "sweep_fractions",
    "VtvParams", "solve_hidden_field", "SynthSpec", "generate",
]

__version__ = "0.1.0"

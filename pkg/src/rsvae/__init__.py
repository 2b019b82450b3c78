"""Representative-sample selection and semantic-conditioned VAE feature
generation for few-shot classification on pre-extracted features."""

from .cvae import CvaeConfig, CvaeModel, generate_features, train
from .datastore import FeatureSet, SemanticTable, Split, load_features, sample_episode, save_features
from .harness import EvalConfig, run_eval
from .selection import estimate_covariance, select_representative
from .synthoracle import SynthConfig, generate_synth

__version__ = "0.1.0"

__all__ = [
    "CvaeConfig", "CvaeModel", "EvalConfig", "FeatureSet", "SemanticTable", "Split", "SynthConfig",
    "estimate_covariance", "generate_features", "generate_synth", "load_features", "run_eval",
    "sample_episode", "save_features", "select_representative", "train",
]

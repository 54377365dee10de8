"""Learnable IIR/FIR feature extraction with an MLP head for accelerometry behavior classification."""
from .core import (
    Dataset, Dims, ModelParams, NormStats, Segment, Variant, init_model, load_model,
    param_count, read_dataset_csv, save_model, write_dataset_csv,
)
from .featurizer import features, fit_norm_stats, infer
from .evaluator import EvalReport, loao_cv, mcc_multiclass
from .stream import StreamEngine, op_count_report, stream_init, stream_push
from .trainer import Hyper, profile, train

__version__ = "0.1.0"

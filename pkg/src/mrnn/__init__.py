"""Missing-value estimation for irregularly sampled multivariate time series."""

__version__ = "0.1.0"

from .dataset import PatientRecord, TemporalDataset, parse_csv, write_csv, normalize_minmax, compute_mask_delta
from .masking import MaskPlan, Setting, mcar_remove, correlated_remove
from .model import Ablation, LossMode, MRnnConfig, MRnnModel, train, impute_single, impute_multiple, rubin_combine, save_model, load_model
from .baselines import BaselineKind, run_baseline
from .evaluation import masked_rmse, auroc, fit_logistic, congeniality, benchmark_run, EvalReport
from .synth import generate_synthetic
from .numeric import Rng

__all__ = [
    "PatientRecord", "TemporalDataset", "parse_csv", "write_csv", "normalize_minmax", "compute_mask_delta",
    "MaskPlan", "Setting", "mcar_remove", "correlated_remove",
    "Ablation", "LossMode", "MRnnConfig", "MRnnModel", "train", "impute_single", "impute_multiple",
    "rubin_combine", "save_model", "load_model",
    "BaselineKind", "run_baseline",
    "masked_rmse", "auroc", "fit_logistic", "congeniality", "benchmark_run", "EvalReport",
    "generate_synthetic", "Rng",
]

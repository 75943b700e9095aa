"""Robustness certificates for nearest prototype classifiers under lp threat models."""
from .core import (Certificate, Diagnostics, Domain, Exactness, Norm, PrototypeModel, Solver, SphereBlock,
                   SphereEmbedding, SupportEntry, ThreatSpec, classify, dispatch_support, load_model, predict,
                   save_model)
from .data import Dataset, load_dataset, read_csv, write_csv
from .errors import NPCError, UnsupportedCombination
from .exact import BoundMode, BoundReport, certify, certify_dataset, certify_semimetric, minmax_lower_bound
from .geometry import rho
from .sphere import certify_embedded, embedded_model, sphere_dual_bound, validate_embedding
from .train import TrainConfig, margin, train

__version__ = "0.1.0"

__all__ = [
    "BoundMode", "BoundReport", "Certificate", "Dataset", "Diagnostics", "Domain", "Exactness", "NPCError",
    "Norm", "PrototypeModel", "Solver", "SphereBlock", "SphereEmbedding", "SupportEntry", "ThreatSpec",
    "TrainConfig", "UnsupportedCombination", "certify", "certify_dataset", "certify_embedded",
    "certify_semimetric", "classify", "dispatch_support", "embedded_model", "load_dataset", "load_model",
    "margin", "minmax_lower_bound", "predict", "read_csv", "rho", "save_model", "sphere_dual_bound",
    "train", "validate_embedding", "write_csv",
]

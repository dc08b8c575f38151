"""Empirical differential privacy of statistical queries over sampled databases."""

from empdp.dataset import Database, DatabaseCollection, DataError, load_collection, save_collection
from empdp.density import FitConfig, ModelSpec, select_model
from empdp.noise import KernelSpec, NoiseKernel, deconvolve, hausdorff, sample_noise, select_lambda, verify_epsilon
from empdp.privacy import (
    PrivacyReport,
    conditional_privacy,
    empirical_privacy,
    infer_privacy_risk,
    joint_privacy,
    risk_curve,
    total_risk,
)
from empdp.queries import QuerySampleSet, QuerySpec, eval_all, eval_all_without, parse_query

__version__ = "0.1.0"

__all__ = [
    "Database",
    "DatabaseCollection",
    "DataError",
    "load_collection",
    "save_collection",
    "FitConfig",
    "ModelSpec",
    "select_model",
    "KernelSpec",
    "NoiseKernel",
    "deconvolve",
    "hausdorff",
    "sample_noise",
    "select_lambda",
    "verify_epsilon",
    "PrivacyReport",
    "conditional_privacy",
    "empirical_privacy",
    "infer_privacy_risk",
    "joint_privacy",
    "risk_curve",
    "total_risk",
    "QuerySampleSet",
    "QuerySpec",
    "eval_all",
    "eval_all_without",
    "parse_query",
]

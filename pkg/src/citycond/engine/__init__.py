from .config import (DEFAULT_SEEDS, CityCondSettings, DataSettings, ExperimentConfig, ModelSettings,
                     RegimeSettings, TrainSettings, dump_config, load_config, load_config_dict, parse_override)
from .crosscity import init_unseen_embeddings, run_crosscity, run_crosscity_model
from .matrix import execute, expand_matrix, run_matrix
from .metrics import mean_std, trajectory_metrics, traffic_metrics
from .optim import Adam, AdamState, adam_step
from .results import SCHEMA_VERSION, ResultSink, RunResult, read_results, write_results
from .train import (Dataset, build_model, evaluate_split, evaluate_traffic, evaluate_trajectory, fit,
                    prepare_dataset, train, train_model)

__all__ = [
    "Adam", "AdamState", "CityCondSettings", "DEFAULT_SEEDS", "DataSettings", "Dataset", "ExperimentConfig",
    "ModelSettings", "RegimeSettings", "ResultSink", "RunResult", "SCHEMA_VERSION", "TrainSettings",
    "adam_step", "build_model", "dump_config", "evaluate_split", "evaluate_traffic", "evaluate_trajectory",
    "execute", "expand_matrix", "fit", "init_unseen_embeddings", "load_config", "load_config_dict",
    "mean_std", "parse_override", "prepare_dataset", "read_results", "run_crosscity", "run_crosscity_model",
    "run_matrix", "train", "train_model", "trajectory_metrics", "traffic_metrics", "write_results",
]

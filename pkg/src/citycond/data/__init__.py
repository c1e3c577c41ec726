from .csvio import CsvSchema, load_csv, read_ground_truth, write_adjacency, write_csv, write_ground_truth
from .series import CitySeries, zscore_fit_transform
from .synthetic import SyntheticSpec, TrajectorySpec, generate_synthetic, generate_synthetic_trajectories, motif_profiles
from .windows import (LOWDATA_FRACTIONS, SPLITS, WindowIndex, build_windows, city_batches, gather, split_bounds,
                      subsample_lowdata, window_count)

__all__ = [
    "CitySeries", "CsvSchema", "LOWDATA_FRACTIONS", "SPLITS", "SyntheticSpec", "TrajectorySpec", "WindowIndex",
    "build_windows", "city_batches", "gather", "generate_synthetic", "generate_synthetic_trajectories",
    "load_csv", "motif_profiles", "read_ground_truth", "split_bounds", "subsample_lowdata", "window_count",
    "write_adjacency", "write_csv", "write_ground_truth", "zscore_fit_transform",
]

"""City-conditioned spatio-temporal forecasting on a small numpy autodiff core."""

__version__ = "0.1.0"

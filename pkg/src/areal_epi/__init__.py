"""Endemic-epidemic negative-binomial model for areal daily count panels."""
from .data import (CountPanel, RegionCovariates, aggregate_national, incidence,
                   ingest_counts, read_covariates, write_counts)
from .estimation import FitOptions, FitResult, fit, penalized_loglik
from .forecast import (Decomposition, Forecast, decompose, interval_coverage, one_step_ahead,
                       simulate)
from .graph import (RegionSet, WeightMatrix, build_adjacency, build_weights, neighbor_order,
                    read_borders)
from .kernels import BACKEND
from .model import ModelSpec, Params, mean, nb_loglik, panel_loglik

__version__ = "0.1.0"

"""Rank-heterogeneous preference models for school-choice style rankings."""

from .data import (BACKWARD, FORWARD, ChoiceDataset, ContextPolicy, DataError, ProgramCatalog,
                   RankingDataset, explode_rankings, summarize)
from .equivalence import check_equivalence, equivalent, map_full, map_lowrank
from .estimation import (CVResult, DivergenceError, FitResult, ModelSpec, TrainConfig, cross_validate, fit,
                         nll, objective)
from .io import SchemaError, load_rankings, save_rankings
from .metrics import (accuracy_in_kth_prediction, consistency_at_k, disaggregate, evaluate, nll_by_rank,
                      tau_matrix, weighted_kendall_tau)
from .models import (FingerprintError, ModelParams, choice_probabilities, init_params, load_params,
                     ranking_log_likelihood, representative_utility, sample_ranking, save_params, zero_params)
from .stratification import StratifiedParams, stratify, stratum_of
from .synthetic import DistrictSpec, LengthDist, block_cdm_truth, generate_district, linear_truth, sample_dataset

__version__ = "0.1.0"

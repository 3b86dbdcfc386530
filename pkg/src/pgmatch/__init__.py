"""Partitioned gradient matching for adaptive training-data subset selection."""
from ._accel import backend
from .data import Dataset, Partitioning, generate_synthetic, inject_noise, load_csv, partition, save_csv
from .model import ModelParams, full_grad, init_params, last_layer_grad, nll_loss
from .omp import GMProblem, GMResult, eval_objective, gradient_match, solve_weights
from .pgm import Selection, TrainConfig, baseline_select, make_batches, run_training, select_round

__version__ = "0.1.0"

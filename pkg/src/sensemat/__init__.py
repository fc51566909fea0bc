"""Data-driven measurement matrices for sparse beamspace channel recovery.

Pipeline: generate sparse beamspace channel datasets (`dataset`), train
unrolled basis-pursuit autoencoders whose tied weight matrix is the
measurement matrix (`unfold`, `train`), then evaluate exported matrices
against random baselines (`baselines`) with classical sparse solvers
(`recon`) under the reconstruction metrics of `metrics`.  The `cli` module
ties the phases into a command-line workbench.
"""

from .dataset import ChannelGenConfig, Dataset, build_dataset, load_dataset, save_dataset
from .unfold import ForwardTrace, UnfoldModel, Variant, forward
from .train import TrainConfig, TrainReport, export_matrix, init_model, train
from .recon import (
    MeasurementMatrix,
    ReconResult,
    SolverOptions,
    bp_exact,
    bp_exact_nonneg,
    bp_subgradient,
    gpsr,
    reconstruct_channel,
)
from .baselines import (
    bernoulli_matrix,
    gaussian_matrix,
    partial_fourier_matrix,
    selection_matrix,
)
from .metrics import ExperimentReport, ReportRow, accurate_pct, effective_rate, evaluate, nmse

__version__ = "0.1.0"

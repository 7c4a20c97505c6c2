"""Gaussian mixtures with component means confined to a pre-selected subspace.

Subspaces come from weighted PCA over kernel-density modes (swept across a
bandwidth ladder) and/or class means; the mixture is then estimated by a
generalized EM under the chosen subspace constraint, and the bandwidth is
picked by training likelihood. Includes a reduced-rank mixture discriminant
baseline, classification/clustering pipelines, and a CLI (``subgauss``).
"""

from .cgmm import (
    ConstrainedGmm,
    Responsibilities,
    classify,
    cluster,
    e_step,
    fit_unconstrained,
    gem_fit,
    log_likelihood,
    m_step_covariance,
    m_step_priors,
    solve_constrained_means,
    solve_constrained_means_per_class,
)
from .dataset import (
    ClassStats,
    LabeledDataset,
    center_by_class,
    class_stats,
    feature_sigma_hat,
    load_csv,
    split_folds,
)
from .estimators import (
    ConstrainedGMMClassifier,
    ConstrainedGMMClusterer,
    ProjectedMDAClassifier,
    ReducedRankMDAClassifier,
    ReducedRankMDAClusterer,
)
from .evaluate import EvalResult, classification_error, clustering_error
from .mda import RrMdaModel, classify_rr, fit_rr_mda
from .modes import (
    KernelDensity,
    ModeLadder,
    ModeSet,
    hmac_ladder,
    kde_log_density,
    mixture_modal_ascent,
    modal_em_ascend,
)
from .pipeline import (
    ExperimentConfig,
    FitReport,
    cross_validate,
    emit_plotdata,
    emit_report,
    gen_constrained_synthetic,
    gen_waveform,
    load_model,
    run_method,
    save_model,
    sweep_fit,
)
from .subspace import (
    Subspace,
    WeightedPointSet,
    closeness,
    discriminant_subspace,
    full_space,
    mpca,
    mpca_mean,
    weighted_pca,
)

__version__ = "0.1.0"

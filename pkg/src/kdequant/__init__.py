"""Multiclass quantification: class-prevalence estimation under prior
probability shift, with KDE-mixture methods and the classical baselines."""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("kdequant")
except _metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.dev0"

from .core import (
    Bag,
    LabelledDataset,
    NotASimplexPoint,
    class_split,
    concat_datasets,
    validate_posteriors,
    validate_prevalence,
)
from .classifier import (
    ClassWeighting,
    LogisticModel,
    cross_val_posteriors,
    fit_logistic,
    predict_posteriors,
)
from .densities import (
    HistogramLayout,
    HistogramRepresentation,
    KdeMixture,
    KdeModel,
    histogram_of_bag,
    kde_fit,
    kde_log_densities,
    kde_log_density,
    kde_sample,
)
from .divergences import (
    CsPrecomputation,
    DiscreteDivergence,
    Generator,
    cs_objective,
    cs_precompute,
    cs_self_term,
    dm_loss,
    hd2_discrete,
    mc_f_divergence,
    topsoe_discrete,
)
from .simplex_opt import OptimizerConfig, minimize_on_simplex
from .quantifiers import (
    ACC,
    CC,
    DIR,
    DM,
    EMQ,
    HDy,
    HDyOvA,
    KDEyCS,
    KDEyHD,
    KDEyML,
    PACC,
    ClassifierConfig,
    Quantifier,
    build_quantifier,
    cc_quantify,
    emq_quantify,
)
from .protocol import (
    EvaluationReport,
    ProtocolConfig,
    SelectionLoss,
    absolute_error,
    draw_bag,
    evaluate_protocol,
    grid_search,
    kraemer_sample,
    relative_absolute_error,
)
from .dataio import SyntheticSpec, generate_synthetic, load_csv, write_csv

__all__ = [name for name in dir() if not name.startswith("_")]

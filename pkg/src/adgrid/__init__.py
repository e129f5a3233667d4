"""Visually congruent ad selection and grid placement over compact image codes."""

from .embedding import ClusterAssignment, Embedding2D, estimate_bandwidth, mean_shift, tsne_embed
from .errors import DataError, DegenerateInputError, DimensionMismatchError, FormatError, InsufficientDataError
from .features import (
    FeatureSet,
    FeatureVector,
    PcaModel,
    PermutationPlan,
    fit_pca,
    fit_permutation,
    ingest_features,
    l2_normalize,
    project,
    project_set,
)
from .kmeans import KMeansCodebook, fit_kmeans
from .layout import (
    Grid,
    LayoutResult,
    diversify_by_cluster,
    place_clustered,
    place_greedy_2d,
    place_local_1d,
    place_local_2d,
    place_preserve_order,
    proximity_order,
    rejection_checks,
)
from .pipeline import PipelineManifest, run, run_pipeline
from .quantizer import (
    AdcTables,
    CompressedCode,
    LopqConfig,
    LopqModel,
    adc_distance,
    code_size_bits,
    encode,
    fit_lopq,
    reconstruct,
)
from .render import render_html
from .selection import AdCandidate, SelectionOutcome, rank_ads, reciprocity_check, select_ads, set_dissimilarity
from .synthetic import SyntheticConfig, eval_agreement, gen_synthetic

__version__ = "0.1.0"

"""Individual tree mapping evaluation: balanced detection metrics,
label-noise simulation and Gaussian-heatmap codecs."""

from .geometry import (
    Disk,
    Polygon,
    RasterSpec,
    TreeRecord,
    box_nms,
    ca_to_cd,
    cd_to_ca,
    disk_iou_upper_bound,
    shape_iou,
)
from .matching import CostParams, MatchResult, choose_K, match
from .metrics import (
    agreement_analysis,
    balanced_ca_error,
    balanced_f1,
    balanced_loc_error,
    balanced_weights,
    counting_nmae,
    evaluate,
    individual_iou,
    patch_iou,
)
from .noise import (
    LabelNoiseModel,
    NoiseGraph,
    PosteriorModel,
    PredictionNoiseModel,
    label_quantity_pmf,
    likelihood_matrix,
    materialize_split,
    perturb_predictions,
    posterior_ca,
    posterior_entropy,
    precision_recall_vs_real,
    prediction_count_pmf,
    prior_from_crown_diameters,
    run_matching_sweep,
    simulate_label_graph,
    synthetic_labels,
)
from .heatmap import (
    DecodeParams,
    FilterBank,
    Heatmap,
    SizeMap,
    build_filter_bank,
    decode_centernet,
    decode_heatmap,
    encode,
    merge_heatmaps,
    nms_peaks,
    read_raster,
    separate_instances,
    write_raster,
    zncc,
)
from .io import load_trees, save_trees

__version__ = "0.1.0"

__all__ = [
    "Disk",
    "Polygon",
    "RasterSpec",
    "TreeRecord",
    "box_nms",
    "ca_to_cd",
    "cd_to_ca",
    "disk_iou_upper_bound",
    "shape_iou",
    "CostParams",
    "MatchResult",
    "choose_K",
    "match",
    "agreement_analysis",
    "balanced_ca_error",
    "balanced_f1",
    "balanced_loc_error",
    "balanced_weights",
    "counting_nmae",
    "evaluate",
    "individual_iou",
    "patch_iou",
    "LabelNoiseModel",
    "NoiseGraph",
    "PosteriorModel",
    "PredictionNoiseModel",
    "label_quantity_pmf",
    "likelihood_matrix",
    "materialize_split",
    "perturb_predictions",
    "posterior_ca",
    "posterior_entropy",
    "precision_recall_vs_real",
    "prediction_count_pmf",
    "prior_from_crown_diameters",
    "run_matching_sweep",
    "simulate_label_graph",
    "synthetic_labels",
    "DecodeParams",
    "FilterBank",
    "Heatmap",
    "SizeMap",
    "build_filter_bank",
    "decode_centernet",
    "decode_heatmap",
    "encode",
    "merge_heatmaps",
    "nms_peaks",
    "read_raster",
    "separate_instances",
    "write_raster",
    "zncc",
    "load_trees",
    "save_trees",
    "__version__",
]

"""ihcquant: whole-slide immunohistochemistry quantification.

Nucleus detection and stain classification in CMYK space, spatial
false-positive filtering, Allred / Ki67 / HER2 scoring, evaluation
metrics, and a synthetic-slide generator with exact ground truth for
end-to-end verification.
"""

__version__ = "0.1.0"

from .clusters import cluster_nuclei, filter_false_positives, filter_small_clusters
from .config import PipelineConfig, config_hash, load_config
from .forest import ForestConfig, RandomForest
from .her2 import (
    Her2FeatureVector,
    Her2Score,
    MembraneRegion,
    extract_features,
    pool_features,
    predict_her2,
    train_rf,
)
from .metrics import (
    UNRESOLVED,
    ConfusionMatrix,
    binary_pixel_metrics,
    consensus_label,
    percentage_agreement,
    quadratic_kappa,
    roc_auc,
)
from .nuclei import (
    DetectorConfig,
    NucleusInstance,
    detect_nuclei_baseline,
    detection_report,
    import_instances,
)
from .pipeline import PipelineResult, run_scoring
from .roi import RoiMask, import_roi, mask_instances
from .score import (
    AllredScore,
    ProliferationScore,
    SlideScore,
    StainCounts,
    allred,
    intensity_score,
    ki67_prs,
    proportion_score,
    score_counts,
)
from .slideio import BinaryMask, Patch, SlideImage, open_slide, stitch, tissue_mask
from .stain import (
    StainClass,
    StainThresholds,
    calibrate_thresholds,
    classify_stain,
    rgb_to_cmyk,
)
from .synth import Her2RegionSpec, SlideSpec, generate_slide, make_her2_dataset

__all__ = [
    "AllredScore",
    "BinaryMask",
    "ConfusionMatrix",
    "DetectorConfig",
    "ForestConfig",
    "Her2FeatureVector",
    "Her2RegionSpec",
    "Her2Score",
    "MembraneRegion",
    "NucleusInstance",
    "Patch",
    "PipelineConfig",
    "PipelineResult",
    "ProliferationScore",
    "RandomForest",
    "RoiMask",
    "SlideImage",
    "SlideScore",
    "SlideSpec",
    "StainClass",
    "StainCounts",
    "StainThresholds",
    "UNRESOLVED",
    "allred",
    "binary_pixel_metrics",
    "calibrate_thresholds",
    "classify_stain",
    "cluster_nuclei",
    "config_hash",
    "consensus_label",
    "detect_nuclei_baseline",
    "detection_report",
    "extract_features",
    "filter_false_positives",
    "filter_small_clusters",
    "generate_slide",
    "import_instances",
    "import_roi",
    "intensity_score",
    "ki67_prs",
    "load_config",
    "make_her2_dataset",
    "mask_instances",
    "open_slide",
    "percentage_agreement",
    "pool_features",
    "predict_her2",
    "proportion_score",
    "quadratic_kappa",
    "rgb_to_cmyk",
    "roc_auc",
    "run_scoring",
    "score_counts",
    "stitch",
    "tissue_mask",
    "train_rf",
    "__version__",
]

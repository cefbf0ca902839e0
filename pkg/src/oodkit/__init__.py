"""Feature-space OOD detection toolkit for segmentation models.

Scores model inputs as likely segmentation failures by applying
Mahalanobis and k-th-nearest-neighbor distances to dimensionality-reduced
bottleneck embeddings (plus softmax/energy/uncertainty scores on model
outputs), and evaluates detection quality against per-image segmentation
metrics.
"""

from .detectors import (
    GaussianModel,
    KnnIndex,
    gaussian_fit,
    knn_fit,
    knn_score,
    knn_score_many,
    mahalanobis,
    mahalanobis_many,
)
from .evaluation import (
    DetectionReport,
    LabelRule,
    RejectionReport,
    ScoredImage,
    auprc,
    auroc,
    evaluate,
    fpr_at_tpr,
    label,
    paired_t_test,
    pearson,
    reject_at_tpr,
)
from .reduction import PcaModel, PoolSpec, avg_pool, patch_mean_pool, pca_fit, pca_transform
from .scorers import energy_score, msp_score, uncertainty_score
from .segmetrics import BinaryMask, SegMetrics, dsc, hausdorff, nsd, surface_voxels
from .tensor_io import (
    DatasetManifest,
    ManifestRecord,
    load_manifest,
    read_npy,
    write_manifest,
    write_npy,
)

__version__ = "0.1.0"

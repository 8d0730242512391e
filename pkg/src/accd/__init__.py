"""A-contrario validation of video change-detection masks.

Per-pixel deep-feature statistics are modeled with a global-to-local
Gaussian mixture; candidate change regions are kept only when their number
of false alarms under that background model falls below a threshold.
"""

from .background import (GaussianComponent, GlobalMixture, LocalizedMixtureModel,
                         fit_global_gmm, fit_pca, local_log_density, localize,
                         prune_components, temporal_median_features)
from .config import RunConfig, load_config, save_config
from .errors import (AccdError, AlignmentError, ConfigError, DataError,
                     FormatError, InsufficientDataError, NumericError,
                     ReadError, ShapeError)
from .metrics import (ObjectCounts, PixelConfusion, evaluate_sequence, f1_siou,
                      object_counts_overlap, object_counts_siou, object_metrics,
                      pixel_confusion, pixel_metrics, ppv, relative_change,
                      score_histograms, siou)
from .model_io import (BinaryMask, FeatureSequence, GroundTruthMask,
                       load_feature_sequence, load_mask, load_model,
                       save_feature_array, save_mask, save_model)
from .pvalue import (LogPValueMap, chi2_sf_even, chi2_sf_odd, ellipsoid_radius_sq,
                     log_chi2_sf, log_pvalue, pvalue_map)
from .validator import (RegionDetection, ValidationReport, fuse_stages,
                        label_components, log_num_tests, region_log_nfa,
                        score_mask, validate_mask)

__version__ = "0.1.0"

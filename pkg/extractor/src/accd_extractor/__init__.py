"""Frame-to-feature front end for the a-contrario change-detection core."""

from .extractor import (ConfigError, ExtractionJob, ExtractionResult,
                        ExtractorError, WeightsError, expected_grid, extract,
                        load_backbone, median_prefilter)

__version__ = "0.1.0"

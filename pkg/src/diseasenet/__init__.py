"""Weighted multilayer disease networks from multi-omics tables.

Variables are discretized, linked by significant mutual information, and
phenotypes are then projected through the biomarkers they share.
"""

from .errors import ConfigError, DataError, DiseaseNetError, StageOrderError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DiseaseNetError", "StageOrderError", "__version__"]

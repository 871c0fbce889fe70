"""Caption-guided person re-identification on a synthetic desk-scale benchmark.

The package trains tiny joint image/text encoders with a caption-guided
pseudo-word inversion branch and a cross-modal fusion head, then evaluates
retrieval under the standard cross-camera protocol (mAP, CMC).
"""

from .config import Config

__version__ = "0.1.0"

__all__ = ["Config", "__version__"]

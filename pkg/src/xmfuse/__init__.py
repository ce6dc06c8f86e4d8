"""Cross-modal pseudo-label fusion and source-free adaptation of paired uni-modal classifiers."""

from .core import IGNORE, PseudoLabelSet, Provenance
from .switch import FusionMode, SourceMeta

__version__ = "0.1.0"

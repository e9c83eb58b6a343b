"""Tag-and-generate style transfer: marker mining, tagger/generator training, decoding, evaluation."""

__version__ = "0.1.0"

"""Offline embedding exporter for the GMNER pipeline.

Runs a text and an image encoder over a dataset and writes the four
embedding stores (token, sentence, entity, image) in the pipeline's binary
store format, plus a manifest with record counts and content checksums.
"""

__version__ = "0.1.0"

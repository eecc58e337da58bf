"""Masked-word recovery workbench: audio masking, word sets, scoring and a small multimodal ASR."""

__version__ = "0.1.0"

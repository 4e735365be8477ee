"""Width-parameterised CNNs for single-channel sonar images: graph IR, cost
analysis, numpy training and low-shot transfer evaluation."""

__version__ = "0.1.0"

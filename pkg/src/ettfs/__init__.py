"""Time-to-first-spike spiking networks: AMOS neurons, ETTFS-init, weight
normalization with affine fusion, and temporal weighting decoding."""

__version__ = "0.1.0"

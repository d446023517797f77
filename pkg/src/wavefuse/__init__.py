"""wavefuse: unsupervised multimodal medical image fusion.

A U-Net autoencoder whose encoder downsamples with wavelet-decomposition
edge-preserving pooling, trained with a composite intensity/gradient/
structure objective, plus a nine-metric fusion quality suite and a
pooling ablation harness.
"""

__version__ = "0.1.0"

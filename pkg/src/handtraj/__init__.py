"""Tokenized 3D hand-interaction trajectory modeling.

Pipeline: a residual VQ autoencoder tokenizes sequences of hand poses and
per-vertex contact maps, a learned indexer maps (text, image features,
3D contact point) to codebook indices, and a conditioned decoder predicts
future trajectories. Includes a synthetic procedural dataset, a geometric
data engine, and trajectory/contact evaluation metrics.
"""

__version__ = "0.1.0"

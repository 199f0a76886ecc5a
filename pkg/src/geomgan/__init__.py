"""geomgan: geometry-based GAN sampling and cycle-consistent manifold alignment.

Generates from the geometry (not the density) of a data manifold via
importance-weighted adversarial losses over a Voronoi partition of an
autoencoder latent space, and aligns two domains with a cycle-consistent
pair of such GANs plus an explicit geometry-preservation penalty.
"""

__version__ = "0.1.0"

"""Shared-domain adaptation for monocular geometry estimation.

A single generator maps synthetic and real images into a learned shared
domain, a Wasserstein critic with gradient penalty aligns the two
distributions there, and a task network trained on the shared domain
predicts depth (outdoor stereo scenes) or face normals/albedo/lighting.
Supervision comes from synthetic ground truth plus label-free virtual
supervision on real data (stereo photometric consistency, or cached
pseudo-labels for the shape-from-shading variant).
"""

__version__ = "0.1.0"

"""Synthetic wheel design-performance dataset pipeline.

Stages: topology-optimized spoke layouts (:mod:`topo`), frontal depth maps
(:mod:`depthsynth`), watertight meshes (:mod:`recon`), free-free modal analysis
(:mod:`modal`), then design-space analysis (:mod:`designspace`, :mod:`metrics3d`).
"""
__version__ = "0.1.0"

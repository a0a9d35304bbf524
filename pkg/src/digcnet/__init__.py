"""Incident-aware traffic speed prediction on road-segment flow graphs.

Subpackages and modules:

* ``nn``         from-scratch reverse-mode autodiff, layers, losses, Adam
* ``data``       domain types and artifact file formats
* ``generator``  synthetic city scenarios with planted incident ground truth
* ``graph``      flow intersection graph, Laplacians, spectral clustering
* ``discovery``  critical-incident discovery from similarity dynamics
* ``classifier`` binary incident-impact classifier and latent features
* ``predictor``  fused graph-convolutional speed predictor and baselines
* ``pipeline``   stage orchestration with manifests
* ``cli``        command-line entry point
"""

__version__ = "1.0.0"

"""Desk-scale lab for poisoning the unlabeled dataset of semi-supervised learning.

The package is organized around six concerns:

- :mod:`poisonlab.nn` -- a small deterministic feed-forward classifier with
  hand-derived gradients, SGD, and EMA shadow weights.
- :mod:`poisonlab.data` -- seeded synthetic datasets, labeled/unlabeled splits,
  weak/strong augmentation, and the dataset text format.
- :mod:`poisonlab.methods` -- seven semi-supervised training strategies built on
  a shared guessed-label loop, producing per-epoch prediction traces.
- :mod:`poisonlab.poison` -- interpolation bridges with density-controlled
  sampling, zero-knowledge support paths, and transfer source search.
- :mod:`poisonlab.defense` -- collinearity scan, agglomerative-clustering
  filter, and the training-dynamics influence monitor.
- :mod:`poisonlab.harness` -- seeded trials, attack/defense pipelines,
  success-rate matrices, and report generation.

An HTTP service (:mod:`poisonlab.service`) wraps the harness for long-running
jobs; the ``poisonlab`` CLI is a thin client of that service.
"""

__version__ = "0.1.0"

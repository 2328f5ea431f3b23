"""Desk-scale simulator of federated transfer learning across modalities.

Unimodal participant groups train supervised classifiers, a multimodal
group trains a contrastive dual-tower model on paired image/audio
features, and a central server averages the shared encoder+projector
parameters across groups every global epoch.
"""

__version__ = "0.1.0"

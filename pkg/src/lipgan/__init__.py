"""Desk-scale laboratory for Lipschitz-penalized adversarial training.

Submodules: ``grad_core`` (reverse-mode autodiff with differentiable
backward), ``loss_metrics`` (score-loss families and admissibility),
``lipschitz_penalty`` (blend sampling and gradient regularizers),
``gan_trainer`` (MLPs, Adam, the training loop, synthetic data),
``ot_oracle`` (exact transport, both dual forms, direction checks) and
``cli`` (the ``lipgan`` command).
"""

__version__ = "0.1.0"

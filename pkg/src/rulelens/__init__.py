"""Self-explaining classification via generated logic rules.

The package predicts by generating a per-instance rule antecedent (a short
AND-conjunction of interpretable atoms) and scoring it with a smoothed
categorical posterior backed by a neural confidence estimator. Training is
differentiable end to end through a straight-through Gumbel-Softmax sampler.
"""

__version__ = "0.1.0"

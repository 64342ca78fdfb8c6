"""Lightweight personalized federated learning over a simulated wireless edge.

Models are trained with decoupled base/personalization parameters, base
gradients are sparsified before upload, personalization weights are pruned
before local computation, and each round's (sparsity, pruning, bandwidth)
plan is chosen by a difference-of-convex solver.
"""

from lightpfl.model import BoundConstants, MiniBatch, ModelSpec, ParamVector

__all__ = ["BoundConstants", "MiniBatch", "ModelSpec", "ParamVector"]
__version__ = "0.1.0"

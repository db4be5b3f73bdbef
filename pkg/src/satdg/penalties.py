"""Domain-generalization penalties and their exact parameter gradients.

CORAL aligns second-order feature statistics across domains, VRex penalizes
the variance of per-domain risks, and the FISH direction approximates a
penalty gradient by the displacement of a short inner SGD loop over domains.
A scalar weight is folded into each penalty's value and gradient.
"""

import math
from dataclasses import dataclass

import numpy as np

from .mlp import DomainBatch, MlpModel, domain_grad, domain_loss
from .numerics import Rng, covariance


@dataclass
class PenaltyEvaluation:
    value: float
    grad: np.ndarray


def coral_penalty(model: MlpModel, batches, weight: float = 1.0) -> PenaltyEvaluation:
    """Mean over unordered domain pairs of ||C_a - C_b||_F^2 / (4 d^2) on
    penultimate features, with its backpropagated gradient.

    A single domain has no pairs and scores exactly zero.
    """
    if not batches:
        raise ValueError("coral_penalty needs at least one batch")
    for batch in batches:
        if batch.inputs.shape[0] < 2:
            raise ValueError("coral_penalty needs >= 2 samples per batch")
    if len(batches) == 1:
        return PenaltyEvaluation(0.0, np.zeros(model.param_count))

    feats = [model.forward(b.inputs)[1] for b in batches]
    covs = [covariance(f) for f in feats]
    d = feats[0].shape[1]
    m = len(batches)
    n_pairs = m * (m - 1) // 2
    scale = weight / (4.0 * d * d * n_pairs)

    pair_terms = []
    for i in range(m):
        for j in range(i + 1, m):
            diff = covs[i] - covs[j]
            pair_terms.append(float(np.sum(diff * diff)))
    value = scale * math.fsum(pair_terms)

    grad = np.zeros(model.param_count)
    for i in range(m):
        # d(value)/dC_i = scale * sum_{j != i} 2 (C_i - C_j)
        d_cov = np.zeros((d, d))
        for j in range(m):
            if j != i:
                d_cov += 2.0 * (covs[i] - covs[j])
        d_cov *= scale
        b = feats[i].shape[0]
        centered = feats[i] - feats[i].mean(axis=0)
        # C = Xc^T Xc / (B-1) with symmetric upstream d_cov
        d_feat = centered @ (d_cov + d_cov.T) / (b - 1)
        grad += model.feature_grad_to_param_grad(batches[i].inputs, d_feat)
    return PenaltyEvaluation(value, grad)


def vrex_penalty(model: MlpModel, batches, weight: float = 1.0) -> PenaltyEvaluation:
    """Population variance of per-domain risks with its exact gradient."""
    if len(batches) < 2:
        raise ValueError("vrex_penalty needs >= 2 domains")
    losses = [domain_loss(model, b) for b in batches]
    m = len(losses)
    mean = math.fsum(losses) / m
    value = weight * math.fsum((l - mean) ** 2 for l in losses) / m
    grad = np.zeros(model.param_count)
    for loss, batch in zip(losses, batches):
        grad += (2.0 * weight / m) * (loss - mean) * domain_grad(model, batch)
    return PenaltyEvaluation(value, grad)


def fish_penalty_grad(
    model: MlpModel, batches, inner_lr: float, inner_steps: int, rng: Rng, weight: float = 1.0
) -> np.ndarray:
    """Displacement of an inner SGD loop, used in place of a penalty gradient.

    Clones theta, takes inner_steps SGD steps of size inner_lr, each on one
    domain; every pass visits the domains once in a seeded random order.
    Returns weight * (theta_tilde - theta); the caller's model is unchanged.
    """
    if not batches:
        raise ValueError("fish_penalty_grad needs at least one batch")
    if inner_lr <= 0:
        raise ValueError("inner_lr must be positive")
    if inner_steps < 1:
        raise ValueError("inner_steps must be >= 1")
    saved = model.get_params()
    taken = 0
    try:
        while taken < inner_steps:
            order = rng.permutation(len(batches))
            for idx in order:
                if taken == inner_steps:
                    break
                grad = domain_grad(model, batches[int(idx)])
                model.set_params(model.theta - inner_lr * grad)
                taken += 1
    finally:
        displaced = model.get_params()
        model.set_params(saved)
    return weight * (displaced - saved)


def make_penalty(kind: str, weight: float = 1.0):
    """Bind a penalty kind and weight into an evaluator(model, batches).

    kind "none" always evaluates to zero; "fish" is handled by the training
    step directly because it consumes an Rng and a step size.
    """
    if kind == "none":
        return lambda model, batches: PenaltyEvaluation(0.0, np.zeros(model.param_count))
    if kind == "coral":
        return lambda model, batches: coral_penalty(model, batches, weight=weight)
    if kind == "vrex":
        return lambda model, batches: vrex_penalty(model, batches, weight=weight)
    raise ValueError("unknown penalty kind %r" % (kind,))

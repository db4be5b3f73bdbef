"""Per-parameter two-branch Blahut-Arimoto-style solver.

Each parameter carries a Bernoulli distribution over two candidate update
values. The default branches are the accumulated positive and negative parts
of the per-domain gradients; `signed_erm` instead uses +/- the pooled
gradient. Iterating a Gibbs reweighting against each domain followed by
marginalization yields the sampling distribution for the update.
"""

from dataclasses import dataclass

import numpy as np

BRANCH_MODES = ("accumulations", "signed_erm")


@dataclass
class DomainGradientSet:
    """Scaled per-domain gradients plus their sign-split accumulations."""

    per_domain: np.ndarray  # (E, P), each row is (1/E) * domain gradient
    g_plus: np.ndarray
    g_minus: np.ndarray
    penalty_grad: np.ndarray

    @property
    def total(self) -> np.ndarray:
        """Pooled gradient: mean over domains of the raw gradients."""
        return self.g_plus + self.g_minus


@dataclass
class BaParams:
    beta: float
    gamma: float
    iterations: int = 25
    branch_mode: str = "accumulations"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.branch_mode not in BRANCH_MODES:
            raise ValueError("unknown branch_mode %r" % (self.branch_mode,))


@dataclass
class SignDistribution:
    """Marginal and per-domain conditional probabilities of the + branch."""

    prob_plus: np.ndarray  # (P,)
    cond_plus: np.ndarray  # (E, P)
    branch_mode: str = "accumulations"

    def disagreement(self) -> float:
        """Largest |conditional - marginal| over domains and parameters."""
        return float(np.max(np.abs(self.cond_plus - self.prob_plus[None, :])))


def build_gradient_set(per_domain_raw, penalty_grad) -> DomainGradientSet:
    """Scale raw domain gradients by 1/|E| and split positive/negative parts."""
    if len(per_domain_raw) < 1:
        raise ValueError("need at least one domain gradient")
    raw = np.asarray(per_domain_raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("domain gradients must share one length")
    penalty_grad = np.asarray(penalty_grad, dtype=np.float64)
    if penalty_grad.shape != (raw.shape[1],):
        raise ValueError("penalty_grad length mismatch")
    scaled = raw / raw.shape[0]
    return DomainGradientSet(
        per_domain=scaled,
        g_plus=np.maximum(scaled, 0.0).sum(axis=0),
        g_minus=np.minimum(scaled, 0.0).sum(axis=0),
        penalty_grad=penalty_grad,
    )


def branch_values(gradset: DomainGradientSet, branch_mode: str):
    if branch_mode == "accumulations":
        return gradset.g_plus, gradset.g_minus
    if branch_mode == "signed_erm":
        total = gradset.total
        return total, -total
    raise ValueError("unknown branch_mode %r" % (branch_mode,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free and exact at +-inf
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ba_solve(gradset: DomainGradientSet, params: BaParams) -> SignDistribution:
    """Iterate conditional reweighting and marginalization from prob 0.5.

    The conditional update is the Gibbs form
        cond_e = p * exp(s_plus) / (p * exp(s_plus) + (1-p) * exp(s_minus))
    computed in log domain, with scores
        s_branch = -(beta * (G_e - branch)^2 + penalty_grad * branch) / gamma.
    """
    b_plus, b_minus = branch_values(gradset, params.branch_mode)
    pg = gradset.penalty_grad
    inv_gamma = 1.0 / params.gamma
    s_plus = -inv_gamma * (params.beta * (gradset.per_domain - b_plus) ** 2 + pg * b_plus)
    s_minus = -inv_gamma * (params.beta * (gradset.per_domain - b_minus) ** 2 + pg * b_minus)
    log_ratio = s_plus - s_minus  # (E, P)

    prob = np.full(gradset.g_plus.shape, 0.5)
    cond = np.tile(prob, (gradset.per_domain.shape[0], 1))
    with np.errstate(divide="ignore"):
        for _ in range(params.iterations):
            logit = np.log(prob) - np.log1p(-prob)
            cond = _sigmoid(logit + log_ratio)
            prob = cond.mean(axis=0)
            assert np.all((prob >= 0.0) & (prob <= 1.0))
    return SignDistribution(prob_plus=prob, cond_plus=cond, branch_mode=params.branch_mode)


def sample_update(gradset: DomainGradientSet, dist: SignDistribution, rng) -> np.ndarray:
    """One Bernoulli draw per parameter: + branch on success, - branch otherwise."""
    b_plus, b_minus = branch_values(gradset, dist.branch_mode)
    if dist.prob_plus.shape != b_plus.shape:
        raise ValueError("distribution length mismatch")
    take_plus = rng.bernoulli(dist.prob_plus)
    return np.where(take_plus, b_plus, b_minus)


def score_magnitude_mean(gradset: DomainGradientSet, beta: float, branch_mode: str = "accumulations") -> float:
    """Mean |beta*(G_e - branch)^2 + penalty_grad*branch| over domains,
    branches, and parameters; feeds the gamma running average."""
    b_plus, b_minus = branch_values(gradset, branch_mode)
    pg = gradset.penalty_grad
    mag_plus = np.abs(beta * (gradset.per_domain - b_plus) ** 2 + pg * b_plus)
    mag_minus = np.abs(beta * (gradset.per_domain - b_minus) ** 2 + pg * b_minus)
    return float((mag_plus.mean() + mag_minus.mean()) / 2.0)

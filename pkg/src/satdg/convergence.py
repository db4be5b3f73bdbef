"""Empirical harness for the decaying-bias SGD guarantee.

Runs stochastic gradient descent with update G^t = grad R(theta^t) + noise +
b^t, where the noise is a zero-mean spherical perturbation of fixed scale and
the bias b^t is a fresh uniform direction of exact norm bias_D / sqrt(t).
With step size eta = 2 * sqrt(delta / (mu * T * V)) the running mean of
squared gradient norms is compared against the certified ceiling

    bound = 2 * (sqrt(delta * mu * V) + lipschitz * bias_D) * sqrt(1 / T).

Objectives are registered by name with hand-certified constants; arbitrary
callables are rejected because the ceiling is meaningless without a valid
certificate. Certificates (delta = range bound, mu = smoothness, lipschitz =
gradient bound, V = second moment bound of the applied update) are derived in
the docstring of each registration below.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, derive_seed
from .tasks import SyntheticTask
from .training import TrainConfig, train


@dataclass(frozen=True)
class ObjectiveConstants:
    delta: float
    mu: float
    lipschitz: float
    second_moment: float

    def __post_init__(self):
        for name in ("delta", "mu", "lipschitz", "second_moment"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)


@dataclass(frozen=True)
class _Objective:
    name: str
    dim: int
    start_radius: float
    value: callable
    grad: callable
    # (noise_scale, bias_D) -> ObjectiveConstants; the noise and bias levels
    # enter through the second-moment certificate.
    constants: callable


_REGISTRY = {}


def register_objective(objective: _Objective):
    if objective.name in _REGISTRY:
        raise ValueError("objective %r already registered" % (objective.name,))
    _REGISTRY[objective.name] = objective
    return objective


def registered_objectives():
    return sorted(_REGISTRY)


def get_objective(name: str) -> _Objective:
    if name not in _REGISTRY:
        raise ValueError(
            "unknown objective %r; registered: %s" % (name, ", ".join(registered_objectives()))
        )
    return _REGISTRY[name]


# ---------------------------------------------------------------------------
# registered objectives with certified constants
# ---------------------------------------------------------------------------
#
# gaussian_bowl: R(theta) = 1 - exp(-||theta||^2 / 2), dim 5.
#   Range: R in [0, 1), so delta = 1 bounds sup R - inf R.
#   Gradient: grad R = theta * exp(-r^2/2) with r = ||theta||; its norm
#   r * exp(-r^2/2) peaks at r = 1, giving lipschitz = exp(-1/2).
#   Hessian: exp(-r^2/2) * (I - theta theta^T); eigenvalues exp(-r^2/2) and
#   (1 - r^2) exp(-r^2/2), whose absolute values never exceed 1, so mu = 1.
#   The eigenvalue (1 - r^2) exp(-r^2/2) is negative for r > 1: non-convex.
#   Update norm: ||G|| <= lipschitz + noise_scale + bias_D, squared gives V.


def _bowl_value(theta):
    return 1.0 - math.exp(-0.5 * float(theta @ theta))


def _bowl_grad(theta):
    return theta * math.exp(-0.5 * float(theta @ theta))


register_objective(_Objective(
    name="gaussian_bowl",
    dim=5,
    start_radius=2.0,
    value=_bowl_value,
    grad=_bowl_grad,
    constants=lambda noise_scale, bias_d: ObjectiveConstants(
        delta=1.0,
        mu=1.0,
        lipschitz=math.exp(-0.5),
        second_moment=(math.exp(-0.5) + noise_scale + bias_d) ** 2,
    ),
))


# cosine_ripple: R(theta) = sum_i [ a (1 - cos theta_i) + b sin^2(theta_i + phi) ]
# with a = 0.5, b = 0.125, phi = 0.7, dim 5.
#   Range: each coordinate term lies in [0, 2a + b] = [0, 1.125], so
#   delta = 5 * 1.125 = 5.625.
#   Gradient: per coordinate a sin t + b sin(2(t + phi)), bounded by
#   a + b = 0.625 <= 0.75; the certificate uses the slightly looser
#   per-coordinate bound 0.75, so lipschitz = sqrt(5) * 0.75.
#   Smoothness: per coordinate |a cos t + 2b cos(2(t + phi))| <= a + 2b =
#   0.75 <= 1; the Hessian is diagonal, so mu = 1.
#   Non-convex: at t = pi the curvature is at most -a + 2b = -0.25 < 0.
#   Update norm: ||G|| <= lipschitz + noise_scale + bias_D as above.

_RIPPLE_A = 0.5
_RIPPLE_B = 0.125
_RIPPLE_PHI = 0.7


def _ripple_value(theta):
    return float(np.sum(
        _RIPPLE_A * (1.0 - np.cos(theta)) + _RIPPLE_B * np.sin(theta + _RIPPLE_PHI) ** 2
    ))


def _ripple_grad(theta):
    return _RIPPLE_A * np.sin(theta) + _RIPPLE_B * np.sin(2.0 * (theta + _RIPPLE_PHI))


register_objective(_Objective(
    name="cosine_ripple",
    dim=5,
    start_radius=2.0,
    value=_ripple_value,
    grad=_ripple_grad,
    constants=lambda noise_scale, bias_d: ObjectiveConstants(
        delta=5.625,
        mu=1.0,
        lipschitz=math.sqrt(5.0) * 0.75,
        second_moment=(math.sqrt(5.0) * 0.75 + noise_scale + bias_d) ** 2,
    ),
))


# quadratic: R(theta) = ||theta||^2 / 2, dim 5, certified on an invariant ball.
#   Let B = max(start_radius, noise_scale + bias_D). One step maps ||theta||
#   to at most (1 - eta) ||theta|| + eta (noise_scale + bias_D), which stays
#   <= B whenever ||theta|| <= B and eta <= 1 (eta = 2 sqrt(delta/(mu T V))
#   = sqrt(2) B / (sqrt(T) (B + noise_scale + bias_D)) <= 1 for T >= 2).
#   On that ball: delta = B^2 / 2, lipschitz = B, mu = 1 (Hessian = I), and
#   ||G|| <= B + noise_scale + bias_D, squared gives V.

_QUAD_RADIUS = 2.0


def _quad_constants(noise_scale, bias_d):
    ball = max(_QUAD_RADIUS, noise_scale + bias_d)
    return ObjectiveConstants(
        delta=0.5 * ball ** 2,
        mu=1.0,
        lipschitz=ball,
        second_moment=(ball + noise_scale + bias_d) ** 2,
    )


register_objective(_Objective(
    name="quadratic",
    dim=5,
    start_radius=_QUAD_RADIUS,
    value=lambda theta: 0.5 * float(theta @ theta),
    grad=lambda theta: theta.copy(),
    constants=_quad_constants,
))


# ---------------------------------------------------------------------------
# the experiment
# ---------------------------------------------------------------------------


@dataclass
class Prop1Config:
    objective: str
    bias_D: float = 0.0
    steps: int = 1000
    noise_scale: float = 0.0
    seed: int = 0
    repetitions: int = 10

    def __post_init__(self):
        get_objective(self.objective)  # raises on unknown names
        if self.bias_D < 0:
            raise ValueError("bias_D must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class Prop1Result:
    avg_sq_grad_norm: float
    bound_value: float
    trajectory: np.ndarray  # squared gradient norm per step, seed-averaged
    step_size: float
    constants: ObjectiveConstants = None
    per_repetition: list = None  # per-repetition time-averaged squared norms

    def __post_init__(self):
        if self.avg_sq_grad_norm < 0 or self.bound_value < 0:
            raise ValueError("result fields must be nonnegative")


def bias_vector(bias_d: float, t: int, dim: int, rng: Rng) -> np.ndarray:
    """Fresh uniform direction scaled to exact norm bias_d / sqrt(t)."""
    if t < 1:
        raise ValueError("steps are 1-indexed")
    if bias_d == 0.0:
        rng.sphere_direction(dim)  # keep the draw stream aligned across bias levels
        return np.zeros(dim)
    return rng.sphere_direction(dim) * (bias_d / math.sqrt(t))


def run_prop1(config: Prop1Config) -> Prop1Result:
    """Average the squared-gradient-norm trajectory over seeded repetitions."""
    obj = get_objective(config.objective)
    consts = obj.constants(config.noise_scale, config.bias_D)
    eta = 2.0 * math.sqrt(consts.delta / (consts.mu * config.steps * consts.second_moment))
    trajectory = np.zeros(config.steps)
    per_repetition = []
    for rep in range(config.repetitions):
        rng = Rng(derive_seed(config.seed, 300 + rep))
        theta = obj.start_radius * rng.sphere_direction(obj.dim)
        rep_total = 0.0
        for t in range(1, config.steps + 1):
            grad = obj.grad(theta)
            sq = float(grad @ grad)
            trajectory[t - 1] += sq
            rep_total += sq
            applied = grad + config.noise_scale * rng.sphere_direction(obj.dim)
            applied = applied + bias_vector(config.bias_D, t, obj.dim, rng)
            theta = theta - eta * applied
        per_repetition.append(rep_total / config.steps)
    trajectory /= config.repetitions
    bound = 2.0 * (
        math.sqrt(consts.delta * consts.mu * consts.second_moment)
        + consts.lipschitz * config.bias_D
    ) * math.sqrt(1.0 / config.steps)
    return Prop1Result(
        avg_sq_grad_norm=float(trajectory.mean()),
        bound_value=bound,
        trajectory=trajectory,
        step_size=eta,
        constants=consts,
        per_repetition=per_repetition,
    )


# ---------------------------------------------------------------------------
# trade-off sweep over the anchoring weight
# ---------------------------------------------------------------------------


def tradeoff_sweep(task: SyntheticTask, base_config: TrainConfig, beta_zeros):
    """One full training run per beta_zero (shared seed and task); returns
    (beta_zero, in_dist_loss, penalty, unseen_loss) rows from the final epoch.

    The penalty column is the weight-independent evaluation value, so rows
    are comparable across beta_zeros and penalty weights.
    """
    values = [float(b) for b in beta_zeros]
    if not values:
        raise ValueError("beta_zeros must be non-empty")
    if any(b < 0 for b in values):
        raise ValueError("beta_zeros must be >= 0")
    if values != sorted(values):
        raise ValueError("beta_zeros must be sorted ascending")
    rows = []
    for beta_zero in values:
        config = dataclasses.replace(base_config, beta_zero=beta_zero)
        final = train(task, config).epochs[-1]
        rows.append((beta_zero, final.in_dist_loss, final.penalty, final.unseen_loss))
    return rows

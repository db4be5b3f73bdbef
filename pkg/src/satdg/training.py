"""Training loop and update rules.

The satisficing step ("sdg") computes per-domain loss gradients, a penalty
gradient, and then samples a per-parameter two-branch update from the
solver in sign_ba; the trade-off weight beta grows with the epoch as
beta_zero * sqrt(t / T), and the solver temperature gamma tracks an
exponential moving average of observed score magnitudes. Baselines: plain
ERM on the pooled loss, the joint loss-plus-penalty objective, a sign
agreement mask across domains, and a variant whose penalty gradient comes
from the inner-loop transfer approximation in penalties.fish_penalty_grad.

Per-domain gradients inside the satisficing step exclude the penalty (it
enters only through its own gradient term), while the agreement-mask step
applies the mask to per-domain loss-plus-penalty gradients; the asymmetry
is intentional.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .mlp import DomainBatch, MlpModel, domain_grad, domain_loss
from .numerics import Rng, derive_seed
from .penalties import PenaltyEvaluation, fish_penalty_grad, make_penalty
from .sign_ba import BaParams, ba_solve, build_gradient_set, sample_update, score_magnitude_mean
from .tasks import SyntheticTask, generate

METHODS = ("erm", "joint", "sdg", "andmask", "fish_sdg")
PENALTY_KINDS = ("coral", "vrex", "none")
GAMMA_FLOOR = 1e-8


@dataclass
class SdgSchedule:
    beta_zero: float
    horizon_T: int
    current_t: int = 1
    gamma_ema: float = 1.0
    ema_decay: float = 0.99

    def __post_init__(self):
        if self.beta_zero < 0:
            raise ValueError("beta_zero must be >= 0")
        if self.horizon_T < 1:
            raise ValueError("horizon_T must be >= 1")
        if not 1 <= self.current_t <= self.horizon_T:
            raise ValueError("current_t must be in [1, horizon_T]")
        if self.gamma_ema <= 0:
            raise ValueError("gamma_ema must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")


def beta_schedule(sched: SdgSchedule) -> float:
    """beta at epoch t: beta_zero * sqrt(t / T)."""
    if not 1 <= sched.current_t <= sched.horizon_T:
        raise ValueError("current_t must be in [1, horizon_T]")
    return sched.beta_zero * math.sqrt(sched.current_t / sched.horizon_T)


def gamma_update(sched: SdgSchedule, observed_mean: float) -> float:
    """Fold an observed mean score magnitude into the gamma moving average.

    The observation is floored at a small positive value so gamma can decay
    toward the floor but never reach zero.
    """
    if not math.isfinite(observed_mean):
        raise ValueError("observed_mean must be finite")
    target = max(float(observed_mean), GAMMA_FLOOR)
    sched.gamma_ema = sched.ema_decay * sched.gamma_ema + (1.0 - sched.ema_decay) * target
    return sched.gamma_ema


@dataclass
class TrainConfig:
    method: str = "sdg"
    penalty_kind: str = "coral"
    penalty_weight: float = 1.0
    learning_rate: float = 0.2
    epochs: int = 300
    domains_per_batch: int = 4
    samples_per_domain: int = 75
    beta_zero: float = 20.0
    ba_iterations: int = 25
    seed: int = 0
    hidden_dims: tuple = (16,)
    loss: str = "squared_error"
    steps_per_epoch: int = 25
    branch_mode: str = "signed_erm"
    gamma_init: float = 1.0
    gamma_decay: float = 0.99

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError("unknown method: %r" % (self.method,))
        if self.penalty_kind not in PENALTY_KINDS:
            raise ValueError("unknown penalty_kind: %r" % (self.penalty_kind,))
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.domains_per_batch < 1:
            raise ValueError("domains_per_batch must be >= 1")
        if self.penalty_kind == "coral" and self.samples_per_domain < 2:
            raise ValueError("samples_per_domain must be >= 2 with the coral penalty")
        if self.samples_per_domain < 1:
            raise ValueError("samples_per_domain must be >= 1")
        if self.ba_iterations < 1:
            raise ValueError("ba_iterations must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.gamma_init <= 0:
            raise ValueError("gamma_init must be positive")
        if not 0.0 <= self.gamma_decay < 1.0:
            raise ValueError("gamma_decay must be in [0, 1)")


@dataclass
class StepRecord:
    method: str
    domain_losses: list
    penalty: float
    beta: float
    gamma: float
    update_norm: float


@dataclass
class EpochMetrics:
    epoch: int
    in_dist_loss: float
    in_dist_acc: float
    unseen_loss: float
    unseen_acc: float
    penalty: float
    gen_gap: float


@dataclass
class RunResult:
    config: TrainConfig
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    final_params: np.ndarray = None


def group_sample(domains, domains_per_batch: int, samples_per_domain: int, rng: Rng):
    """Sample domains uniformly without replacement, then rows uniformly with
    replacement within each chosen domain. Consumes the generator in a fixed
    order so runs are seed-deterministic."""
    if domains_per_batch > len(domains):
        raise ValueError("domains_per_batch exceeds the number of domains")
    chosen = rng.choice_without_replacement(len(domains), domains_per_batch)
    batches = []
    for idx in chosen:
        source = domains[int(idx)]
        rows = rng.integers(source.inputs.shape[0], samples_per_domain)
        batches.append(DomainBatch(source.inputs[rows], source.labels[rows], source.domain_id))
    return batches


def _penalty_eval(model, batches, config) -> PenaltyEvaluation:
    return make_penalty(config.penalty_kind, config.penalty_weight)(model, batches)


def _domain_grads(model, batches):
    losses = []
    grads = np.empty((len(batches), model.param_count))
    for i, batch in enumerate(batches):
        loss, grad = model.loss_and_grad(batch)
        losses.append(float(loss))
        grads[i] = grad
    return losses, grads


def erm_step(model, batches, config: TrainConfig, rng: Rng = None) -> StepRecord:
    """One SGD step on the domain-mean loss; the penalty is evaluated only
    for the record."""
    losses, grads = _domain_grads(model, batches)
    pen = _penalty_eval(model, batches, config)
    update = grads.mean(axis=0)
    model.set_params(model.get_params() - config.learning_rate * update)
    return StepRecord("erm", losses, pen.value, 0.0, 0.0, float(np.linalg.norm(update)))


def joint_step(model, batches, config: TrainConfig, rng: Rng = None) -> StepRecord:
    """One SGD step on domain-mean loss plus weighted penalty."""
    losses, grads = _domain_grads(model, batches)
    pen = _penalty_eval(model, batches, config)
    update = grads.mean(axis=0) + pen.grad
    model.set_params(model.get_params() - config.learning_rate * update)
    return StepRecord("joint", losses, pen.value, 0.0, 0.0, float(np.linalg.norm(update)))


def andmask_step(model, batches, config: TrainConfig, rng: Rng = None) -> StepRecord:
    """Keep only parameters whose per-domain loss-plus-penalty gradients all
    share a sign (zero agrees with both signs); survivors get the mean."""
    losses, grads = _domain_grads(model, batches)
    pen = _penalty_eval(model, batches, config)
    per_domain = grads + pen.grad[None, :]
    agree = np.all(per_domain >= 0.0, axis=0) | np.all(per_domain <= 0.0, axis=0)
    update = np.where(agree, per_domain.mean(axis=0), 0.0)
    model.set_params(model.get_params() - config.learning_rate * update)
    return StepRecord("andmask", losses, pen.value, 0.0, 0.0, float(np.linalg.norm(update)))


def sdg_step(model, batches, config: TrainConfig, sched: SdgSchedule, rng: Rng) -> StepRecord:
    """Per-domain loss gradients -> penalty gradient -> two-branch solve ->
    sampled update. Uses gamma from before this step's moving-average fold."""
    losses, grads = _domain_grads(model, batches)
    pen = _penalty_eval(model, batches, config)
    if config.method == "fish_sdg":
        penalty_grad = fish_penalty_grad(
            model, batches,
            inner_lr=config.learning_rate,
            inner_steps=len(batches),
            rng=rng,
            weight=config.penalty_weight,
        )
    else:
        # The solver disfavors branches aligned with penalty_grad, and the
        # branch it picks is then *subtracted* from theta, so the applied
        # displacement ends up aligned with penalty_grad.  Pass the descent
        # direction -grad(penalty) so that displacement lowers the penalty;
        # fish_penalty_grad already returns its vector in this orientation
        # (the inner-loop displacement toward the transfer point).
        penalty_grad = -pen.grad
    # A diverged penalty can emit non-finite gradient entries; those carry no
    # usable steering signal, so drop them rather than poisoning the solver,
    # whose branch scores are exponentiated.
    penalty_grad = np.where(np.isfinite(penalty_grad), penalty_grad, 0.0)
    beta = beta_schedule(sched)
    gamma = sched.gamma_ema
    gradset = build_gradient_set(grads, penalty_grad)
    params = BaParams(beta=beta, gamma=gamma, iterations=config.ba_iterations,
                      branch_mode=config.branch_mode)
    dist = ba_solve(gradset, params)
    update = sample_update(gradset, dist, rng)
    gamma_update(sched, score_magnitude_mean(gradset, beta, config.branch_mode))
    model.set_params(model.get_params() - config.learning_rate * update)
    return StepRecord(config.method, losses, pen.value, beta, gamma,
                      float(np.linalg.norm(update)))


def _accuracy(model: MlpModel, batch: DomainBatch):
    outputs, _ = model.forward(batch.inputs)
    if model.loss == "cross_entropy":
        pred = np.argmax(outputs, axis=1)
    else:
        pred = (outputs[:, 0] >= 0.5).astype(np.int64)
    return int((pred == batch.labels).sum()), batch.labels.shape[0]


def _split_metrics(model, batches):
    losses = [domain_loss(model, b) for b in batches]
    hits = total = 0
    for b in batches:
        h, n = _accuracy(model, b)
        hits += h
        total += n
    return float(np.mean(losses)), hits / total


def evaluate(model, data, config, epoch: int) -> EpochMetrics:
    """Per-epoch metrics; the penalty is reported at weight 1.0 of the
    configured kind so values are comparable across methods and weights."""
    in_loss, in_acc = _split_metrics(model, data.in_dist_test)
    un_loss, un_acc = _split_metrics(model, data.unseen)
    pen = make_penalty(config.penalty_kind, 1.0)(model, data.in_dist_test)
    return EpochMetrics(epoch, in_loss, in_acc, un_loss, un_acc, pen.value,
                        un_loss - in_loss)


def train(task: SyntheticTask, config: TrainConfig) -> RunResult:
    """Run `epochs` epochs of `steps_per_epoch` group-sampled steps with a
    full evaluation before training and after every epoch."""
    data = generate(task)
    if config.loss == "cross_entropy":
        out_dim = int(max(int(b.labels.max()) for b in data.train) + 1)
    else:
        out_dim = 1
    model = MlpModel(
        [task.input_dim, *config.hidden_dims, out_dim],
        loss=config.loss,
        rng=Rng(derive_seed(config.seed, 100)),
    )
    sched = SdgSchedule(
        beta_zero=config.beta_zero,
        horizon_T=max(config.epochs, 1),
        current_t=1,
        gamma_ema=config.gamma_init,
        ema_decay=config.gamma_decay,
    )
    rng = Rng(derive_seed(config.seed, 200))
    result = RunResult(config=config)
    result.epochs.append(evaluate(model, data, config, epoch=0))
    for epoch in range(1, config.epochs + 1):
        sched.current_t = epoch
        for _ in range(config.steps_per_epoch):
            batches = group_sample(data.train, config.domains_per_batch,
                                   config.samples_per_domain, rng)
            if config.method == "erm":
                record = erm_step(model, batches, config, rng)
            elif config.method == "joint":
                record = joint_step(model, batches, config, rng)
            elif config.method == "andmask":
                record = andmask_step(model, batches, config, rng)
            else:
                record = sdg_step(model, batches, config, sched, rng)
            result.steps.append(record)
        result.epochs.append(evaluate(model, data, config, epoch=epoch))
    result.final_params = model.get_params()
    return result

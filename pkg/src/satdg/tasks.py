"""Seeded synthetic multi-domain tasks with controllable spurious features.

spurious_linear: the label comes from the sign of a fixed linear function of
the core coordinates (plus label noise), so one core-only classifier is
optimal on every domain. Each spurious coordinate equals the clean concept
sign times a per-domain strength plus unit Gaussian noise: on training
domains the strength is nonnegative, on unseen domains it is flipped to
nonpositive, so a model leaning on the spurious coordinates transfers badly.
Training strengths default to a spread of distinct values so the spurious
block's covariance differs across domains, and the core coordinates carry a
mild per-domain isotropic scale (the label rule is sign-based, hence scale
invariant, so core stays Bayes-optimal everywhere). Cross-domain
feature-alignment penalties therefore face a real trade-off: the spurious
mismatch can be removed by dropping the spurious features, but the core
mismatch can only be shrunk by deadening the core response itself.

rotated_moons: the classic interleaved half-circles with a per-domain
rotation angle; unseen domains use angles outside the training range.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mlp import DomainBatch
from .numerics import Rng, derive_seed

_MOON_FEATURE_NOISE = 0.15
_MOON_TRAIN_MAX_DEG = 60.0
_MOON_UNSEEN_BASE_DEG = 90.0
_MOON_UNSEEN_STEP_DEG = 20.0

# Disjoint sub-stream indices for seed derivation.
_STREAM_WEIGHTS = 0
_STREAM_TRAIN = 1
_STREAM_TEST = 1001
_STREAM_UNSEEN = 2001


@dataclass
class SyntheticTask:
    kind: str = "spurious_linear"
    core_dim: int = 2
    spurious_dim: int = 5
    domain_count: int = 4
    unseen_count: int = 1
    spurious_strength: list = None  # per training domain, >= 0
    unseen_strength: list = None  # per unseen domain, <= 0
    core_scale: list = None  # per training domain, > 0; unseen domains use 1.0
    label_noise: float = 0.05
    samples_per_domain: int = 500
    test_samples_per_domain: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("spurious_linear", "rotated_moons"):
            raise ValueError("unknown task kind: %r" % (self.kind,))
        if self.domain_count < 2:
            raise ValueError("domain_count must be >= 2")
        if self.unseen_count < 1:
            raise ValueError("unseen_count must be >= 1")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")
        if self.samples_per_domain < 1 or self.test_samples_per_domain < 1:
            raise ValueError("sample counts must be >= 1")
        if self.kind == "spurious_linear":
            if self.core_dim < 1:
                raise ValueError("core_dim must be >= 1")
            if self.spurious_dim < 1:
                raise ValueError("spurious_dim must be >= 1")
            if self.spurious_strength is None:
                # Widely spread per-domain strengths (mean 0.8) keep the
                # domain feature covariances far apart, so cross-domain
                # penalties stay active, while the modest mean leaves the
                # shortcut only partially informative about the noisy label.
                self.spurious_strength = [
                    0.8 * s for s in np.linspace(0.1, 1.9, self.domain_count)
                ]
            self.spurious_strength = [float(s) for s in self.spurious_strength]
            if len(self.spurious_strength) != self.domain_count:
                raise ValueError("spurious_strength needs one entry per training domain")
            if any(s < 0 for s in self.spurious_strength):
                raise ValueError("training spurious_strength entries must be >= 0")
            if self.unseen_strength is None:
                # Mildly reversed shortcut on held-out domains: strong enough
                # to punish spurious reliance, mild enough that unseen accuracy
                # reflects core quality instead of saturating at the floor.
                self.unseen_strength = [-0.5] * self.unseen_count
            self.unseen_strength = [float(s) for s in self.unseen_strength]
            if len(self.unseen_strength) != self.unseen_count:
                raise ValueError("unseen_strength needs one entry per unseen domain")
            if any(s > 0 for s in self.unseen_strength):
                raise ValueError("unseen_strength entries must be <= 0")
            if self.core_scale is None:
                self.core_scale = [
                    float(c) for c in np.linspace(0.4, 1.6, self.domain_count)
                ]
            self.core_scale = [float(c) for c in self.core_scale]
            if len(self.core_scale) != self.domain_count:
                raise ValueError("core_scale needs one entry per training domain")
            if any(c <= 0 for c in self.core_scale):
                raise ValueError("core_scale entries must be positive")

    @property
    def input_dim(self) -> int:
        if self.kind == "rotated_moons":
            return 2
        return self.core_dim + self.spurious_dim

    def core_weights(self) -> np.ndarray:
        """The fixed unit vector whose sign labels the core coordinates."""
        if self.kind != "spurious_linear":
            raise ValueError("core weights exist only for spurious_linear")
        return Rng(derive_seed(self.seed, _STREAM_WEIGHTS)).sphere_direction(self.core_dim)

    def train_angles_deg(self) -> list:
        return [float(a) for a in np.linspace(0.0, _MOON_TRAIN_MAX_DEG, self.domain_count)]

    def unseen_angles_deg(self) -> list:
        return [
            _MOON_UNSEEN_BASE_DEG + _MOON_UNSEEN_STEP_DEG * u
            for u in range(self.unseen_count)
        ]


@dataclass
class TaskData:
    train: list = field(default_factory=list)  # DomainBatch per training domain
    in_dist_test: list = field(default_factory=list)  # fresh draws, same domains
    unseen: list = field(default_factory=list)  # DomainBatch per unseen domain


def _linear_domain(task, weights, strength, count, stream, domain_id, core_scale=1.0) -> DomainBatch:
    rng = Rng(derive_seed(task.seed, stream))
    x_core = core_scale * rng.normal(count * task.core_dim).reshape(count, task.core_dim)
    clean = x_core @ weights >= 0.0
    flips = rng.uniform(count) < task.label_noise
    labels = clean ^ flips
    # The spurious coordinates track the observed (noise-flipped) label, so
    # in-distribution they are strictly more informative than the core block:
    # a model leaning on them fits even the flipped samples, while a core-only
    # model is pinned at the label-noise floor.  On unseen domains the sign of
    # the strength is reversed and that advantage becomes a liability.
    signs = np.where(labels, 1.0, -1.0)
    x_sp = signs[:, None] * strength + rng.normal(count * task.spurious_dim).reshape(
        count, task.spurious_dim
    )
    inputs = np.concatenate([x_core, x_sp], axis=1)
    return DomainBatch(inputs, labels.astype(np.int64), domain_id)


def _moons_domain(task, angle_deg, count, stream, domain_id) -> DomainBatch:
    rng = Rng(derive_seed(task.seed, stream))
    n0 = count // 2
    n1 = count - n0
    t0 = rng.uniform(n0) * math.pi
    t1 = rng.uniform(n1) * math.pi
    pts = np.concatenate(
        [
            np.stack([np.cos(t0), np.sin(t0)], axis=1),
            np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1),
        ]
    )
    pts = pts + _MOON_FEATURE_NOISE * rng.normal(2 * count).reshape(count, 2)
    labels = np.concatenate([np.zeros(n0, dtype=bool), np.ones(n1, dtype=bool)])
    flips = rng.uniform(count) < task.label_noise
    labels = labels ^ flips
    angle = math.radians(angle_deg)
    rot = np.array(
        [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
    )
    pts = pts @ rot.T
    order = rng.permutation(count)
    return DomainBatch(pts[order], labels[order].astype(np.int64), domain_id)


def generate(task: SyntheticTask) -> TaskData:
    """Materialize the training domains, a fresh in-distribution test split
    drawn from the same domains, and the unseen domains."""
    data = TaskData()
    if task.kind == "spurious_linear":
        weights = task.core_weights()
        for e, (strength, scale) in enumerate(zip(task.spurious_strength, task.core_scale)):
            data.train.append(
                _linear_domain(task, weights, strength, task.samples_per_domain, _STREAM_TRAIN + e, e, scale)
            )
            data.in_dist_test.append(
                _linear_domain(task, weights, strength, task.test_samples_per_domain, _STREAM_TEST + e, e, scale)
            )
        for u, strength in enumerate(task.unseen_strength):
            data.unseen.append(
                _linear_domain(
                    task, weights, strength, task.test_samples_per_domain,
                    _STREAM_UNSEEN + u, task.domain_count + u,
                )
            )
    else:
        for e, angle in enumerate(task.train_angles_deg()):
            data.train.append(
                _moons_domain(task, angle, task.samples_per_domain, _STREAM_TRAIN + e, e)
            )
            data.in_dist_test.append(
                _moons_domain(task, angle, task.test_samples_per_domain, _STREAM_TEST + e, e)
            )
        for u, angle in enumerate(task.unseen_angles_deg()):
            data.unseen.append(
                _moons_domain(
                    task, angle, task.test_samples_per_domain, _STREAM_UNSEEN + u,
                    task.domain_count + u,
                )
            )
    return data


def export_csv(batches, path) -> None:
    """One row per sample: feature columns, label, domain_id."""
    if not batches:
        raise ValueError("nothing to export")
    dim = batches[0].inputs.shape[1]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["feature_%d" % j for j in range(dim)] + ["label", "domain_id"])
        for batch in batches:
            for row, label in zip(batch.inputs, batch.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label), batch.domain_id])

"""Task environments and data generation for multi-task linear regression.

A task environment fixes a ground-truth subspace: labels are generated as
``y = <B* w*, x> + z`` with isotropic Gaussian inputs ``x``, a shared
column-orthonormal representation ``B*``, per-task heads ``w*`` drawn from
a Gaussian, and independent Gaussian label noise ``z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import qr_orthonormalize
from .rng import standard_normal

__all__ = [
    "DataSet",
    "DiversityStats",
    "TaskBatch",
    "TaskEnvironment",
    "diversity_stats",
    "sample_dataset",
    "sample_environment",
    "sample_task_batch",
]

_ORTHONORMAL_TOL = 1e-12


@dataclass(frozen=True)
class TaskEnvironment:
    """Ground-truth description of a task distribution.

    Attributes
    ----------
    d:
        Ambient input dimension.
    k:
        Dimension of the shared subspace (``1 <= k < d``).
    ground_truth_rep:
        ``d x k`` matrix with orthonormal columns spanning the true subspace.
    head_mean:
        Mean of the per-task head distribution, shape ``(k,)``.
    head_scale:
        Standard deviation of each head coordinate.
    noise_std:
        Standard deviation of the label noise.
    """

    d: int
    k: int
    ground_truth_rep: np.ndarray
    head_mean: np.ndarray
    head_scale: float
    noise_std: float

    def __post_init__(self) -> None:
        if not 1 <= self.k < self.d:
            raise ValueError(f"require 1 <= k < d, got k={self.k}, d={self.d}")
        rep = np.asarray(self.ground_truth_rep, dtype=float)
        if rep.shape != (self.d, self.k):
            raise ValueError(f"ground_truth_rep must have shape ({self.d}, {self.k})")
        gram_error = np.abs(rep.T @ rep - np.eye(self.k)).max()
        if gram_error > _ORTHONORMAL_TOL:
            raise ValueError(
                f"ground_truth_rep columns must be orthonormal (max Gram deviation {gram_error:.3e})"
            )
        mean = np.asarray(self.head_mean, dtype=float)
        if mean.shape != (self.k,):
            raise ValueError(f"head_mean must have shape ({self.k},), got {mean.shape}")
        if self.head_scale < 0.0:
            raise ValueError(f"head_scale must be nonnegative, got {self.head_scale}")
        if self.noise_std < 0.0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")
        object.__setattr__(self, "ground_truth_rep", rep)
        object.__setattr__(self, "head_mean", mean)


@dataclass(frozen=True)
class DataSet:
    """A finite sample ``(X, y)`` from one task."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValueError(
                f"labels must have shape ({inputs.shape[0]},), got {labels.shape}"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        """Number of samples."""
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TaskBatch:
    """The tasks of one outer round: heads plus optional finite samples.

    ``inner_sets``/``outer_sets`` are per-task datasets used by
    finite-sample algorithms for adaptation and for the outer update
    respectively; population-mode batches carry heads only.
    """

    heads: np.ndarray
    inner_sets: tuple[DataSet, ...] | None = None
    outer_sets: tuple[DataSet, ...] | None = None

    def __post_init__(self) -> None:
        heads = np.asarray(self.heads, dtype=float)
        if heads.ndim != 2 or heads.shape[0] < 1:
            raise ValueError(f"heads must be (n, k) with n >= 1, got shape {heads.shape}")
        for name in ("inner_sets", "outer_sets"):
            sets = getattr(self, name)
            if sets is not None and len(sets) != heads.shape[0]:
                raise ValueError(f"{name} must contain one dataset per task")
        object.__setattr__(self, "heads", heads)

    @property
    def n(self) -> int:
        """Number of tasks in the round."""
        return self.heads.shape[0]


@dataclass(frozen=True)
class DiversityStats:
    """Spectral statistics of a batch's head second moment.

    ``mu_sq``/``L_sq`` are the extreme eigenvalues of ``(1/n) sum w w^T``,
    ``eta`` the norm of the mean head, ``L_max`` the largest head norm.
    """

    mu_sq: float
    L_sq: float
    eta: float
    L_max: float

    def __post_init__(self) -> None:
        slop = 1e-9 * max(1.0, self.L_max**2)
        if not 0.0 <= self.mu_sq <= self.L_sq + slop:
            raise ValueError(f"require 0 <= mu_sq <= L_sq, got {self.mu_sq}, {self.L_sq}")
        if self.L_sq > self.L_max**2 + slop:
            raise ValueError(f"require L_sq <= L_max^2, got {self.L_sq}, {self.L_max ** 2}")
        if self.eta**2 > self.L_sq + slop:
            raise ValueError(f"require eta^2 <= L_sq, got {self.eta ** 2}, {self.L_sq}")


def sample_environment(
    d: int,
    k: int,
    head_mean: float | np.ndarray,
    head_scale: float,
    noise_std: float,
    rng: np.random.Generator,
) -> TaskEnvironment:
    """Draw a ground-truth subspace and package the task distribution.

    The representation is the orthonormalized factor of a ``d x k``
    standard Gaussian matrix (a uniformly random subspace). ``head_mean``
    may be a scalar (broadcast to all ``k`` coordinates) or a vector.
    """
    if not 1 <= k < d:
        raise ValueError(f"require 1 <= k < d, got k={k}, d={d}")
    gaussian = standard_normal(rng, (d, k))
    rep, _ = qr_orthonormalize(gaussian)
    mean = np.broadcast_to(np.asarray(head_mean, dtype=float), (k,)).copy()
    return TaskEnvironment(
        d=d,
        k=k,
        ground_truth_rep=rep,
        head_mean=mean,
        head_scale=float(head_scale),
        noise_std=float(noise_std),
    )


def sample_task_batch(env: TaskEnvironment, n: int, rng: np.random.Generator) -> TaskBatch:
    """Draw ``n`` task heads ``w* ~ N(head_mean, head_scale^2 I_k)``."""
    if n < 1:
        raise ValueError(f"need at least one task per batch, got n={n}")
    heads = env.head_mean + env.head_scale * standard_normal(rng, (n, env.k))
    return TaskBatch(heads=heads)


def sample_dataset(
    env: TaskEnvironment, head: np.ndarray, m: int, rng: np.random.Generator
) -> DataSet:
    """Draw ``m`` labeled samples from the task with the given true head.

    Inputs are standard Gaussian; labels are the linear response through
    the ground-truth representation plus ``N(0, noise_std^2)`` noise. The
    noise stream is consumed even when ``noise_std == 0`` so that input
    draws are identical across noise settings under the same stream.
    """
    if m < 1:
        raise ValueError(f"need at least one sample, got m={m}")
    head = np.asarray(head, dtype=float)
    inputs = standard_normal(rng, (m, env.d))
    noise = env.noise_std * standard_normal(rng, (m,))
    labels = inputs @ (env.ground_truth_rep @ head) + noise
    return DataSet(inputs=inputs, labels=labels)


def diversity_stats(batch: TaskBatch) -> DiversityStats:
    """Spectral statistics of the batch's ground-truth heads."""
    heads = batch.heads
    n = heads.shape[0]
    second_moment = heads.T @ heads / n
    eigenvalues = np.linalg.eigvalsh(second_moment)
    mean = heads.mean(axis=0)
    row_sq = np.einsum("ij,ij->i", heads, heads)
    return DiversityStats(
        mu_sq=max(float(eigenvalues[0]), 0.0),
        L_sq=float(eigenvalues[-1]),
        eta=math.sqrt(float(mean @ mean)),
        L_max=math.sqrt(float(row_sq.max())),
    )

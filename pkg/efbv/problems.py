"""Finite-sum logistic regression problems and their ingredients.

The objective is f = (1/n) sum_i f_i with

    f_i(x) = (1/N_i) sum_j log(1 + exp(-b_ij a_ij^T x))
             + (l2/2) ||x||^2
             + w_nc sum_k x_k^2 / (1 + x_k^2)

plus an optional nonsmooth term R handled by its proximity
operator. Worker i holds the rows of its :class:`Shard`.
"""

import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, List, Optional, Union

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.special import expit

from . import libsvm
from . import rng as rng_streams
from .errors import ConfigurationError, NumericalError
from .types import (
    DenseVector,
    RegularizerKind,
    Shard,
    SmoothnessProfile,
    as_dense,
)


# -- data -----------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """
    Labelled design matrix.

    Attributes:
        features (np.ndarray): N x d matrix, row j is a_j.
        labels (np.ndarray): Length-N vector with entries in {-1, +1}.
    """

    features: npt.NDArray[np.float64]
    labels: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ConfigurationError(
                f"features must be a nonempty N x d matrix, got "
                f"shape {self.features.shape}"
            )
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigurationError(
                "labels must have one entry per feature row"
            )
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ConfigurationError("labels must be -1 or +1")
        if not np.all(np.isfinite(self.features)):
            raise ConfigurationError("features must be finite")

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def normalize_rows(self) -> "Dataset":
        """Copy with every nonzero row scaled to unit norm."""
        norms = np.linalg.norm(self.features, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return Dataset(self.features / norms, self.labels.copy())

    def to_libsvm(self) -> str:
        buf = io.StringIO()
        libsvm.write_libsvm(buf, self.features, self.labels)
        return buf.getvalue()

    @classmethod
    def load(
        cls, path: Union[str, Path], dim: Optional[int] = None
    ) -> "Dataset":
        """Read a LibSVM file from disk."""
        with open(path, "r", encoding="utf-8") as fh:
            dataset = parse_libsvm(fh, dim)
        logger.info(
            f"Loaded {path}: N={dataset.n_samples}, d={dataset.dim}"
        )
        return dataset


def parse_libsvm(stream: IO[str], dim: Optional[int] = None) -> Dataset:
    """Parse LibSVM text into a dense :class:`Dataset`."""
    features, labels = libsvm.parse_libsvm(stream, dim)
    return Dataset(features, labels)


def synth_dataset(
    seed: int, d: int, N: int, separation: float
) -> Dataset:
    """Gaussian two-class data, deterministic given *seed*.

    Labels are fair coin flips; features are standard normal
    shifted by ``b * separation / 2`` on every coordinate, so the
    class means are ``separation * sqrt(d)`` apart.
    """
    if d < 1 or N < 2:
        raise ConfigurationError(
            f"synthetic data needs d >= 1 and N >= 2, got d={d}, N={N}"
        )
    gen = rng_streams.stream(seed, rng_streams.DATA)
    labels = gen.choice(np.array([-1.0, 1.0]), size=N)
    features = gen.standard_normal((N, d))
    features += 0.5 * separation * labels[:, None]
    return Dataset(features, labels)


def partition(
    dataset: Dataset, n: int, overlap: int = 1, seed: int = 0
) -> List[Shard]:
    """Split shuffled rows into n blocks and assign them to workers.

    Blocks have floor(N/n) rows; the remainder goes to the last
    worker. With ``overlap=2`` worker i also receives block
    (i+1) mod n, so every non-remainder row is held twice.
    """
    N = dataset.n_samples
    if not 1 <= n <= N:
        raise ConfigurationError(
            f"worker count must be in [1, N={N}], got {n}"
        )
    if overlap not in (1, 2):
        raise ConfigurationError(
            f"overlap must be 1 or 2, got {overlap}"
        )
    gen = rng_streams.stream(seed, rng_streams.PARTITION)
    perm = gen.permutation(N).astype(np.int64)
    size = N // n
    blocks = [perm[i * size : (i + 1) * size] for i in range(n)]
    remainder = perm[n * size :]

    shards: List[Shard] = []
    for i in range(n):
        owned = sorted({i, (i + 1) % n}) if overlap == 2 else [i]
        parts = [blocks[b] for b in owned]
        if i == n - 1:
            parts.append(remainder)
        shards.append(Shard(owner=i, rows=np.concatenate(parts)))
    logger.debug(
        f"Partitioned N={N} rows over n={n} workers "
        f"(overlap={overlap}): sizes "
        f"{[s.size for s in shards][:8]}"
        f"{'...' if n > 8 else ''}"
    )
    return shards


# -- regularizer ----------------------------------------------------


@dataclass(frozen=True)
class Regularizer:
    """
    Nonsmooth term R(x) = weight * ||x||_1 (or zero).

    Attributes:
        kind (RegularizerKind): NONE or L1.
        weight (float): Nonnegative coefficient.
    """

    kind: RegularizerKind = RegularizerKind.NONE
    weight: float = 0.0

    def __post_init__(self) -> None:
        if self.weight < 0.0:
            raise ConfigurationError(
                f"regularizer weight must be >= 0, got {self.weight}"
            )

    @property
    def is_zero(self) -> bool:
        return self.kind is RegularizerKind.NONE or self.weight == 0

    def value(self, x: DenseVector) -> float:
        if self.kind is RegularizerKind.NONE:
            return 0.0
        if self.kind is RegularizerKind.L1:
            return self.weight * float(np.abs(x).sum())
        raise ConfigurationError(
            f"unsupported regularizer kind {self.kind!r}"
        )


def prox(
    regularizer: Regularizer, gamma: float, v: DenseVector
) -> DenseVector:
    """prox_{gamma R}(v) = argmin_y gamma R(y) + ||v - y||^2 / 2."""
    if gamma <= 0.0:
        raise ConfigurationError(
            f"prox step gamma must be positive, got {gamma}"
        )
    if regularizer.kind is RegularizerKind.NONE:
        return v.copy()
    if regularizer.kind is RegularizerKind.L1:
        thresh = gamma * regularizer.weight
        return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
    raise ConfigurationError(
        f"unsupported regularizer kind {regularizer.kind!r}"
    )


# -- objective ------------------------------------------------------


class LogisticProblem:
    """
    Distributed logistic regression over a partitioned dataset.

    Attributes:
        dataset (Dataset): The pooled data.
        shards (List[Shard]): One shard per worker.
        l2 (float): Strong-convexity coefficient folded into f_i.
        nonconvex_weight (float): Weight of sum x^2/(1+x^2).
        regularizer (Regularizer): Nonsmooth term R.
        mu (float): PL/KL constant handed to the tuner.
    """

    def __init__(
        self,
        dataset: Dataset,
        shards: List[Shard],
        l2: float = 0.0,
        nonconvex_weight: float = 0.0,
        regularizer: Optional[Regularizer] = None,
        mu: Optional[float] = None,
    ) -> None:
        if not shards:
            raise ConfigurationError("at least one shard is required")
        for i, shard in enumerate(shards):
            if shard.owner != i:
                raise ConfigurationError(
                    f"shard {i} has owner {shard.owner}"
                )
            if shard.size == 0:
                raise ConfigurationError(f"shard {i} is empty")
        if l2 < 0.0 or nonconvex_weight < 0.0:
            raise ConfigurationError(
                f"l2 and nonconvex_weight must be >= 0, got "
                f"{l2}, {nonconvex_weight}"
            )
        self.dataset = dataset
        self.shards = list(shards)
        self.l2 = float(l2)
        self.nonconvex_weight = float(nonconvex_weight)
        self.regularizer = regularizer or Regularizer()
        self.mu = self.l2 if mu is None else float(mu)
        if self.mu < 0.0:
            raise ConfigurationError(
                f"mu must be >= 0, got {self.mu}"
            )

        rows = np.concatenate([s.rows for s in self.shards])
        sizes = np.array([s.size for s in self.shards])
        self._stack = dataset.features[rows]
        self._labels = dataset.labels[rows]
        self._sizes = sizes.astype(np.float64)
        self._offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self._inv_size = np.repeat(1.0 / self._sizes, sizes)

    @property
    def n_workers(self) -> int:
        return len(self.shards)

    @property
    def dim(self) -> int:
        return self.dataset.dim

    @property
    def is_convex(self) -> bool:
        return self.nonconvex_weight == 0.0

    # smooth extra terms shared by every f_i

    def _extra_value(self, x: DenseVector) -> float:
        val = 0.5 * self.l2 * float(x @ x)
        if self.nonconvex_weight:
            sq = x * x
            val += self.nonconvex_weight * float(
                np.sum(sq / (1.0 + sq))
            )
        return val

    def _extra_gradient(self, x: DenseVector) -> DenseVector:
        grad = self.l2 * x
        if self.nonconvex_weight:
            grad = grad + self.nonconvex_weight * (
                2.0 * x / (1.0 + x * x) ** 2
            )
        return grad

    @staticmethod
    def _check(values: np.ndarray, what: str) -> np.ndarray:
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"non-finite {what}")
        return values

    def local_values(self, x: DenseVector) -> npt.NDArray[np.float64]:
        """Vector (f_1(x), ..., f_n(x))."""
        margins = self._labels * (self._stack @ x)
        losses = np.logaddexp(0.0, -margins)
        sums = np.add.reduceat(losses, self._offsets)
        vals = sums / self._sizes + self._extra_value(x)
        return self._check(vals, "objective values")

    def local_gradients(
        self, x: DenseVector
    ) -> npt.NDArray[np.float64]:
        """n x d matrix whose row i is grad f_i(x)."""
        margins = self._labels * (self._stack @ x)
        coef = -self._labels * expit(-margins) * self._inv_size
        grads = np.add.reduceat(
            coef[:, None] * self._stack, self._offsets, axis=0
        )
        grads += self._extra_gradient(x)
        return self._check(grads, "gradients")

    def local_gradient(self, i: int, x: DenseVector) -> DenseVector:
        """grad f_i(x) for worker *i*."""
        if not 0 <= i < self.n_workers:
            raise ConfigurationError(
                f"worker index must be in [0, {self.n_workers}), "
                f"got {i}"
            )
        x = as_dense(x, self.dim)
        shard = self.shards[i]
        feats = self.dataset.features[shard.rows]
        labels = self.dataset.labels[shard.rows]
        coef = -labels * expit(-labels * (feats @ x))
        grad = coef @ feats / shard.size + self._extra_gradient(x)
        return self._check(grad, f"gradient of worker {i}")

    def local_value(self, i: int, x: DenseVector) -> float:
        return float(self.local_values(x)[i])

    def value(self, x: DenseVector) -> float:
        """f(x)."""
        return float(np.mean(self.local_values(x)))

    def composite_value(self, x: DenseVector) -> float:
        """f(x) + R(x)."""
        return self.value(x) + self.regularizer.value(x)

    def gradient(self, x: DenseVector) -> DenseVector:
        """grad f(x) = mean_i grad f_i(x)."""
        return self.local_gradients(x).mean(axis=0)


def smoothness(
    problem: LogisticProblem, root_sum: bool = False
) -> SmoothnessProfile:
    """Closed-form smoothness constants of the logistic problem.

    L_i = l2 + (1/(4 N_i)) sum_j ||a_ij||^2 + 2 w_nc, the last term
    bounding the curvature of the nonconvex penalty. L_tilde is
    the quadratic mean of the L_i, or sqrt(sum_i L_i^2) when
    *root_sum* is set; L defaults to L_tilde.
    """
    sq_norms = np.einsum("ij,ij->i", problem._stack, problem._stack)
    per_worker = np.add.reduceat(sq_norms, problem._offsets)
    L_list = (
        problem.l2
        + per_worker / (4.0 * problem._sizes)
        + 2.0 * problem.nonconvex_weight
    )
    if np.any(L_list <= 0.0):
        raise ConfigurationError(
            "a worker has zero curvature (all-zero features and no "
            "regularization); smoothness constants are undefined"
        )
    profile = SmoothnessProfile.from_constants(
        [float(v) for v in L_list],
        mu=problem.mu,
        root_sum=root_sum,
    )
    logger.debug(
        f"Smoothness: L_tilde={profile.L_tilde:.6g}, "
        f"L_max={max(profile.L_list):.6g}, mu={profile.mu}"
    )
    return profile


def build_problem(
    dataset: Dataset,
    n: int,
    overlap: int = 1,
    seed: int = 0,
    l2: float = 0.0,
    nonconvex_weight: float = 0.0,
    regularizer: Optional[Regularizer] = None,
) -> LogisticProblem:
    """Partition *dataset* and wrap it as a :class:`LogisticProblem`."""
    shards = partition(dataset, n, overlap=overlap, seed=seed)
    return LogisticProblem(
        dataset,
        shards,
        l2=l2,
        nonconvex_weight=nonconvex_weight,
        regularizer=regularizer,
    )


def local_gradient(
    problem: LogisticProblem, i: int, x: DenseVector
) -> DenseVector:
    """grad f_i(x) of worker *i*."""
    return problem.local_gradient(i, x)

"""Compression operators and their closed-form class parameters.

Every operator maps R^d to R^d and knows three things about
itself: how to draw one realization as a :class:`SparseMessage`,
how to draw a vectorized batch of realizations (Monte Carlo
certification), and how to enumerate its finite law (exact
certification). ``params`` returns the (eta, omega, omega_av)
triple proven for the family.

Top-k selection is deterministic: among equal magnitudes the
lower index wins.
"""

import itertools
import math
from dataclasses import dataclass, replace
from typing import (
    Any,
    Dict,
    List,
    Optional,
)

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.special import comb

from .errors import ConfigurationError
from .protocols import Compressor, RoundContext
from .types import (
    DEFAULT_BITS_PER_COORDINATE,
    ClassParams,
    Dependence,
    DenseVector,
    Family,
    SparseMessage,
    as_dense,
)


# -- scalar calculus ------------------------------------------------


def scale_params(p: ClassParams, lam: float) -> ClassParams:
    """Parameters of ``lam * C`` for ``C`` with parameters *p*.

    Scaling degrades the bias linearly and shrinks both variances
    quadratically: eta' = lam*eta + 1 - lam, omega' = lam^2 omega.
    """
    if not 0.0 < lam <= 1.0:
        raise ConfigurationError(
            f"scaling lambda must be in (0, 1], got {lam}"
        )
    return ClassParams(
        eta=p.eta + (1.0 - lam) * (1.0 - p.eta),
        omega=lam**2 * p.omega,
        omega_av=lam**2 * p.omega_av,
    )


def lambda_star(eta: float, omega: float) -> float:
    """Scaling in (0, 1] minimizing (1-lam+lam*eta)^2 + lam^2 omega."""
    if not 0.0 <= eta < 1.0:
        raise ConfigurationError(
            f"eta must be in [0, 1), got {eta}"
        )
    if omega < 0.0:
        raise ConfigurationError(
            f"omega must be >= 0, got {omega}"
        )
    gap = 1.0 - eta
    return min(gap / (gap**2 + omega), 1.0)


def contraction_alpha(p: ClassParams) -> Optional[float]:
    """alpha = 1 - eta^2 - omega, or None when not contractive."""
    total = p.eta**2 + p.omega
    if total >= 1.0:
        return None
    return 1.0 - total


def _averaged_variance(
    omega: float,
    n: int,
    dependence: Dependence,
    label: str,
) -> float:
    if n < 1:
        raise ConfigurationError(
            f"worker count n must be >= 1, got {n}"
        )
    if dependence is Dependence.INDEPENDENT:
        return omega / n
    logger.warning(
        f"{label} is not a sampling compressor; joint dependence "
        f"gives no averaging gain, using omega_av = omega"
    )
    return omega


def top_indices(x: DenseVector, k: int) -> npt.NDArray[np.int64]:
    """Indices of the k largest |x_i|, lower index first on ties."""
    order = np.argsort(-np.abs(x), kind="stable")
    return order[:k].astype(np.int64)


def _random_subsets(
    rng: np.random.Generator, size: int, pool: int, k: int
) -> npt.NDArray[np.int64]:
    """*size* uniform k-subsets of range(pool), one per row."""
    keys = rng.random((size, pool))
    if k == pool:
        return np.tile(np.arange(pool), (size, 1))
    return np.argpartition(keys, k - 1, axis=1)[:, :k]


# -- operators ------------------------------------------------------


class _Operator:
    """Shared plumbing: validation and the zero-input rule."""

    dim: int
    name: str
    joint: bool = False

    def compress(
        self,
        x: DenseVector,
        rng: np.random.Generator,
        context: Optional[RoundContext] = None,
        bits_per_coordinate: int = DEFAULT_BITS_PER_COORDINATE,
    ) -> SparseMessage:
        x = as_dense(x, self.dim)
        if not np.any(x):
            return SparseMessage.empty(self.dim)
        return self._compress(
            x, rng, context or RoundContext(), bits_per_coordinate
        )

    def _compress(
        self,
        x: DenseVector,
        rng: np.random.Generator,
        context: RoundContext,
        bits_per_coordinate: int,
    ) -> SparseMessage:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} d={self.dim}>"


class Identity(_Operator):
    """No compression: C(x) = x, sent densely."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self.name = "identity"

    def _compress(self, x, rng, context, bits_per_coordinate):
        return SparseMessage.from_support(
            x,
            np.arange(self.dim),
            bits_per_coordinate=bits_per_coordinate,
        )

    def sample_batch(self, x, rng, size):
        return np.tile(as_dense(x, self.dim), (size, 1))

    def outcomes(self, x):
        return [(1.0, as_dense(x, self.dim).copy())]

    def outcome_count(self) -> int:
        return 1

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        return ClassParams(eta=0.0, omega=0.0, omega_av=0.0)


class RandK(_Operator):
    """Keep k uniformly chosen coordinates, multiplied by d/k.

    *gain* multiplies the d/k factor and exists only to build
    deliberately mis-scaled negative controls; the claimed
    parameters are always those of rand-k.
    """

    def __init__(self, dim: int, k: int, gain: float = 1.0) -> None:
        self.dim = dim
        self.k = k
        self.gain = gain
        self.factor = gain * dim / k
        suffix = "" if gain == 1.0 else f"x{gain:g}"
        self.name = f"rand-{k}{suffix}"

    def _compress(self, x, rng, context, bits_per_coordinate):
        idx = rng.choice(self.dim, size=self.k, replace=False)
        return SparseMessage.from_support(
            self.factor * x,
            idx,
            bits_per_coordinate=bits_per_coordinate,
        )

    def sample_batch(self, x, rng, size):
        x = as_dense(x, self.dim)
        idx = _random_subsets(rng, size, self.dim, self.k)
        out = np.zeros((size, self.dim))
        np.put_along_axis(out, idx, self.factor * x[idx], axis=1)
        return out

    def outcomes(self, x):
        x = as_dense(x, self.dim)
        weight = 1.0 / self.outcome_count()
        result = []
        for subset in itertools.combinations(range(self.dim), self.k):
            out = np.zeros(self.dim)
            sel = list(subset)
            out[sel] = self.factor * x[sel]
            result.append((weight, out))
        return result

    def outcome_count(self) -> int:
        return comb(self.dim, self.k, exact=True)

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        omega = self.dim / self.k - 1.0
        return ClassParams(
            eta=0.0,
            omega=omega,
            omega_av=_averaged_variance(
                omega, n, dependence, self.name
            ),
        )


class TopK(_Operator):
    """Keep the k largest-magnitude coordinates verbatim."""

    def __init__(self, dim: int, k: int) -> None:
        self.dim = dim
        self.k = k
        self.name = f"top-{k}"

    def _compress(self, x, rng, context, bits_per_coordinate):
        return SparseMessage.from_support(
            x,
            top_indices(x, self.k),
            bits_per_coordinate=bits_per_coordinate,
        )

    def _apply(self, x: DenseVector) -> DenseVector:
        out = np.zeros(self.dim)
        idx = top_indices(x, self.k)
        out[idx] = x[idx]
        return out

    def sample_batch(self, x, rng, size):
        return np.tile(self._apply(as_dense(x, self.dim)), (size, 1))

    def outcomes(self, x):
        return [(1.0, self._apply(as_dense(x, self.dim)))]

    def outcome_count(self) -> int:
        return 1

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        eta = math.sqrt(1.0 - self.k / self.dim)
        assert eta < 1.0
        return ClassParams(eta=eta, omega=0.0, omega_av=0.0)


class Mix(_Operator):
    """top-k plus k' uniformly chosen other coordinates, verbatim."""

    def __init__(self, dim: int, k: int, k_prime: int) -> None:
        self.dim = dim
        self.k = k
        self.k_prime = k_prime
        self.name = f"mix-({k},{k_prime})"

    def _rest(self, top: npt.NDArray[np.int64]):
        return np.setdiff1d(np.arange(self.dim), top)

    def _compress(self, x, rng, context, bits_per_coordinate):
        top = top_indices(x, self.k)
        rest = self._rest(top)
        extra = rng.choice(rest, size=self.k_prime, replace=False)
        return SparseMessage.from_support(
            x,
            np.concatenate([top, extra]),
            bits_per_coordinate=bits_per_coordinate,
        )

    def sample_batch(self, x, rng, size):
        x = as_dense(x, self.dim)
        top = top_indices(x, self.k)
        rest = self._rest(top)
        pick = rest[
            _random_subsets(rng, size, rest.size, self.k_prime)
        ]
        out = np.zeros((size, self.dim))
        out[:, top] = x[top]
        np.put_along_axis(out, pick, x[pick], axis=1)
        return out

    def outcomes(self, x):
        x = as_dense(x, self.dim)
        top = top_indices(x, self.k)
        rest = self._rest(top)
        weight = 1.0 / self.outcome_count()
        result = []
        for subset in itertools.combinations(rest, self.k_prime):
            out = np.zeros(self.dim)
            sel = np.concatenate([top, np.asarray(subset)])
            out[sel] = x[sel]
            result.append((weight, out))
        return result

    def outcome_count(self) -> int:
        return comb(
            self.dim - self.k, self.k_prime, exact=True
        )

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        d, k, kp = self.dim, self.k, self.k_prime
        eta = (d - k - kp) / math.sqrt((d - k) * d)
        omega = kp * (d - k - kp) / ((d - k) * d)
        assert eta < 1.0
        return ClassParams(
            eta=eta,
            omega=omega,
            omega_av=_averaged_variance(
                omega, n, dependence, self.name
            ),
        )


class Comp(_Operator):
    """rand-k applied to the top-k' coordinates, scaled by k'/k."""

    def __init__(self, dim: int, k: int, k_prime: int) -> None:
        self.dim = dim
        self.k = k
        self.k_prime = k_prime
        self.factor = k_prime / k
        self.name = f"comp-({k},{k_prime})"

    def _compress(self, x, rng, context, bits_per_coordinate):
        top = top_indices(x, self.k_prime)
        pick = top[
            rng.choice(self.k_prime, size=self.k, replace=False)
        ]
        return SparseMessage.from_support(
            self.factor * x,
            pick,
            bits_per_coordinate=bits_per_coordinate,
        )

    def sample_batch(self, x, rng, size):
        x = as_dense(x, self.dim)
        top = top_indices(x, self.k_prime)
        pick = top[_random_subsets(rng, size, self.k_prime, self.k)]
        out = np.zeros((size, self.dim))
        np.put_along_axis(out, pick, self.factor * x[pick], axis=1)
        return out

    def outcomes(self, x):
        x = as_dense(x, self.dim)
        top = top_indices(x, self.k_prime)
        weight = 1.0 / self.outcome_count()
        result = []
        for subset in itertools.combinations(top, self.k):
            out = np.zeros(self.dim)
            sel = np.asarray(subset)
            out[sel] = self.factor * x[sel]
            result.append((weight, out))
        return result

    def outcome_count(self) -> int:
        return comb(self.k_prime, self.k, exact=True)

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        d, k, kp = self.dim, self.k, self.k_prime
        eta = math.sqrt((d - kp) / d)
        omega = (kp - k) / k
        assert eta < 1.0
        return ClassParams(
            eta=eta,
            omega=omega,
            omega_av=_averaged_variance(
                omega, n, dependence, self.name
            ),
        )


class NiceSampling(_Operator):
    """m-nice sampling: (n/m) x if the worker is in Omega, else 0.

    The subset Omega is drawn once per round by the engine through
    :meth:`draw_participants` and passed to every worker in the
    :class:`RoundContext`; the operator never draws it itself.
    """

    joint = True

    def __init__(self, dim: int, m: int, n: int) -> None:
        self.dim = dim
        self.m = m
        self.n = n
        self.factor = n / m
        self.name = f"nice-{m}/{n}"

    def draw_participants(
        self, rng: np.random.Generator
    ) -> frozenset:
        chosen = rng.choice(self.n, size=self.m, replace=False)
        return frozenset(int(i) for i in chosen)

    def participation_masks(
        self, rng: np.random.Generator, size: int
    ) -> npt.NDArray[np.bool_]:
        """*size* x n boolean matrix of i.i.d. joint draws of Omega."""
        idx = _random_subsets(rng, size, self.n, self.m)
        mask = np.zeros((size, self.n), dtype=bool)
        np.put_along_axis(mask, idx, True, axis=1)
        return mask

    def _compress(self, x, rng, context, bits_per_coordinate):
        if context.participants is None:
            raise ConfigurationError(
                f"{self.name} needs the round's participant set "
                f"in the RoundContext"
            )
        if context.worker not in context.participants:
            return SparseMessage.empty(self.dim)
        return SparseMessage.from_support(
            self.factor * x,
            np.arange(self.dim),
            bits_per_coordinate=bits_per_coordinate,
        )

    def sample_batch(self, x, rng, size):
        x = as_dense(x, self.dim)
        # marginal law of one worker: member of Omega w.p. m/n
        member = self.participation_masks(rng, size)[:, 0]
        return np.outer(member * self.factor, x)

    def outcomes(self, x):
        x = as_dense(x, self.dim)
        weight = 1.0 / self.outcome_count()
        zero = np.zeros(self.dim)
        return [
            (weight, self.factor * x if 0 in subset else zero.copy())
            for subset in itertools.combinations(range(self.n), self.m)
        ]

    def outcome_count(self) -> int:
        return comb(self.n, self.m, exact=True)

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        if n != self.n:
            raise ConfigurationError(
                f"{self.name} is defined for n={self.n} workers, "
                f"got n={n}"
            )
        omega = (self.n - self.m) / self.m
        omega_av = (
            0.0
            if self.n == 1
            else (self.n - self.m) / (self.m * (self.n - 1))
        )
        return ClassParams(eta=0.0, omega=omega, omega_av=omega_av)


class Scaled(_Operator):
    """lam * inner; the wire carries inner's entries, lam is a header."""

    def __init__(self, inner: Compressor, lam: float) -> None:
        self.inner = inner
        self.lam = lam
        self.dim = inner.dim
        self.joint = bool(getattr(inner, "joint", False))
        self.name = f"{lam:.3g}*{inner.name}"

    def draw_participants(
        self, rng: np.random.Generator
    ) -> frozenset:
        return self.inner.draw_participants(rng)  # type: ignore[attr-defined]

    def compress(
        self,
        x: DenseVector,
        rng: np.random.Generator,
        context: Optional[RoundContext] = None,
        bits_per_coordinate: int = DEFAULT_BITS_PER_COORDINATE,
    ) -> SparseMessage:
        msg = self.inner.compress(
            x, rng, context, bits_per_coordinate
        )
        return replace(msg, scale=self.lam * msg.scale)

    def sample_batch(self, x, rng, size):
        return self.lam * self.inner.sample_batch(x, rng, size)

    def outcomes(self, x):
        return [(w, self.lam * v) for w, v in self.inner.outcomes(x)]

    def outcome_count(self) -> int:
        return self.inner.outcome_count()

    def params(self, n: int, dependence: Dependence) -> ClassParams:
        return scale_params(
            self.inner.params(n, dependence), self.lam
        )


# -- specs ----------------------------------------------------------


@dataclass(frozen=True)
class CompressorSpec:
    """
    Declarative description of a compressor family.

    Attributes:
        family (Family): Which operator.
        d (int): Ambient dimension.
        k (int): Kept coordinates (RandK, TopK, Mix, Comp).
        k_prime (int): Second size parameter (Mix, Comp).
        m (int): Participants per round (NiceSampling).
        n (int): Worker count (NiceSampling).
        inner (Optional[CompressorSpec]): Wrapped spec (Scaled).
        lam (float): Scaling in (0, 1] (Scaled).
    """

    family: Family
    d: int
    k: int = 0
    k_prime: int = 0
    m: int = 0
    n: int = 0
    inner: Optional["CompressorSpec"] = None
    lam: float = 1.0

    def __post_init__(self) -> None:
        d, k, kp = self.d, self.k, self.k_prime
        if not isinstance(d, int) or d < 1:
            raise ConfigurationError(
                f"dimension d must be a positive int, got {d}"
            )
        fam = self.family
        if fam in (Family.RAND_K, Family.TOP_K):
            if not 1 <= k <= d:
                raise ConfigurationError(
                    f"{fam.value} needs 1 <= k <= d={d}, got k={k}"
                )
        elif fam is Family.MIX:
            if k < 1 or kp < 1 or k + kp > d:
                raise ConfigurationError(
                    f"mix needs k, k' >= 1 and k + k' <= d={d}, "
                    f"got ({k}, {kp})"
                )
        elif fam is Family.COMP:
            if not 1 <= k <= kp <= d:
                raise ConfigurationError(
                    f"comp needs 1 <= k <= k' <= d={d}, "
                    f"got ({k}, {kp})"
                )
        elif fam is Family.NICE_SAMPLING:
            if not 1 <= self.m <= self.n:
                raise ConfigurationError(
                    f"nice sampling needs 1 <= m <= n, "
                    f"got m={self.m}, n={self.n}"
                )
        elif fam is Family.SCALED:
            if self.inner is None:
                raise ConfigurationError(
                    "scaled spec needs an inner spec"
                )
            if self.inner.d != d:
                raise ConfigurationError(
                    f"inner spec has d={self.inner.d}, expected {d}"
                )
            if not 0.0 < self.lam <= 1.0:
                raise ConfigurationError(
                    f"scaling lambda must be in (0, 1], "
                    f"got {self.lam}"
                )

    # factories

    @classmethod
    def identity(cls, d: int) -> "CompressorSpec":
        return cls(Family.IDENTITY, d)

    @classmethod
    def rand_k(cls, d: int, k: int) -> "CompressorSpec":
        return cls(Family.RAND_K, d, k=k)

    @classmethod
    def top_k(cls, d: int, k: int) -> "CompressorSpec":
        return cls(Family.TOP_K, d, k=k)

    @classmethod
    def mix(cls, d: int, k: int, k_prime: int) -> "CompressorSpec":
        return cls(Family.MIX, d, k=k, k_prime=k_prime)

    @classmethod
    def comp(cls, d: int, k: int, k_prime: int) -> "CompressorSpec":
        return cls(Family.COMP, d, k=k, k_prime=k_prime)

    @classmethod
    def nice_sampling(cls, d: int, m: int, n: int) -> "CompressorSpec":
        return cls(Family.NICE_SAMPLING, d, m=m, n=n)

    @classmethod
    def scaled(
        cls, inner: "CompressorSpec", lam: float
    ) -> "CompressorSpec":
        return cls(Family.SCALED, inner.d, inner=inner, lam=lam)

    def build(self) -> Compressor:
        """Instantiate the operator this spec describes."""
        fam = self.family
        if fam is Family.IDENTITY:
            return Identity(self.d)
        if fam is Family.RAND_K:
            return RandK(self.d, self.k)
        if fam is Family.TOP_K:
            return TopK(self.d, self.k)
        if fam is Family.MIX:
            return Mix(self.d, self.k, self.k_prime)
        if fam is Family.COMP:
            return Comp(self.d, self.k, self.k_prime)
        if fam is Family.NICE_SAMPLING:
            return NiceSampling(self.d, self.m, self.n)
        assert self.inner is not None
        return Scaled(self.inner.build(), self.lam)

    @property
    def label(self) -> str:
        return self.build().name

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"family": self.family.value}
        for key in ("k", "k_prime", "m", "n"):
            if getattr(self, key):
                out[key] = getattr(self, key)
        if self.family is Family.SCALED:
            assert self.inner is not None
            out["lam"] = self.lam
            out["inner"] = self.inner.to_dict()
        return out

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], d: int
    ) -> "CompressorSpec":
        """Parse the manifest form ``{"family": "comp", ...}``."""
        allowed = {"family", "k", "k_prime", "m", "n", "lam", "inner"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(
                f"unknown compressor keys: {sorted(unknown)}"
            )
        try:
            family = Family(data["family"])
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(
                f"compressor family must be one of "
                f"{[f.value for f in Family]}, "
                f"got {data.get('family')!r}"
            ) from exc
        inner = None
        if "inner" in data:
            inner = cls.from_dict(data["inner"], d)
        return cls(
            family=family,
            d=d,
            k=int(data.get("k", 0)),
            k_prime=int(data.get("k_prime", 0)),
            m=int(data.get("m", 0)),
            n=int(data.get("n", 0)),
            inner=inner,
            lam=float(data.get("lam", 1.0)),
        )


# -- module-level operations ----------------------------------------


def compress(
    spec: CompressorSpec,
    x: DenseVector,
    rng: np.random.Generator,
    context: Optional[RoundContext] = None,
    bits_per_coordinate: int = DEFAULT_BITS_PER_COORDINATE,
) -> SparseMessage:
    """Draw one realization of *spec*'s operator on *x*."""
    return spec.build().compress(
        x, rng, context, bits_per_coordinate
    )


def theoretical_params(
    spec: CompressorSpec,
    n: int,
    dependence: Dependence = Dependence.INDEPENDENT,
) -> ClassParams:
    """Closed-form (eta, omega, omega_av) of *spec* for n workers."""
    if n < 1:
        raise ConfigurationError(
            f"worker count n must be >= 1, got {n}"
        )
    return spec.build().params(n, dependence)


def catalog(d: int, n: int) -> List[CompressorSpec]:
    """The built-in compressor catalog certified by the CLI."""
    k = max(1, d // 4)
    small = max(1, d // 8)
    rand = CompressorSpec.rand_k(d, k)
    return [
        CompressorSpec.identity(d),
        rand,
        CompressorSpec.top_k(d, k),
        CompressorSpec.mix(d, small, k),
        CompressorSpec.comp(d, small, max(small, d // 2)),
        CompressorSpec.nice_sampling(d, max(1, n // 4), n),
        CompressorSpec.scaled(
            rand, lambda_star(0.0, d / k - 1.0)
        ),
    ]


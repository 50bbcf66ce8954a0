"""Type definitions for the EF-BV simulator.

Contains all enums, TypedDicts, and dataclasses used across the
system. Vectors are plain 1-D ``float64`` numpy arrays
(:data:`DenseVector`).
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import (
    Any,
    Dict,
    Iterator,
    List,
    Optional,
    TypedDict,
)

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError, ContractViolation

DenseVector = npt.NDArray[np.float64]

DEFAULT_BITS_PER_COORDINATE = 64


class Family(Enum):
    """Compressor families known to the simulator."""

    IDENTITY = "identity"
    RAND_K = "rand_k"
    TOP_K = "top_k"
    MIX = "mix"
    COMP = "comp"
    NICE_SAMPLING = "nice_sampling"
    SCALED = "scaled"


class Dependence(Enum):
    """How the n worker compressors are coupled within a round."""

    INDEPENDENT = "independent"
    JOINT_NICE = "joint_nice"


class Algorithm(Enum):
    """Named configurations of the EF-BV round."""

    EF_BV = "ef_bv"
    EF21 = "ef21"
    DIANA = "diana"


class Mode(Enum):
    """Which convergence guarantee the constants are tuned for."""

    PL = "pl"
    KL = "kl"
    NONCONVEX = "nonconvex"


class RegularizerKind(Enum):
    """Nonsmooth term R handled by the proximal step."""

    NONE = "none"
    L1 = "l1"


class HInit(Enum):
    """Initialization policy for the control variates h_i^0."""

    ZEROS = "zeros"
    LOCAL_GRADIENT = "local_gradient"


def as_dense(x: Any, dim: Optional[int] = None) -> DenseVector:
    """Coerce *x* to a finite 1-D float64 vector of length *dim*."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(
            f"vector must be 1-D, got shape {arr.shape}"
        )
    if dim is not None and arr.shape[0] != dim:
        raise ContractViolation(
            f"vector must have length {dim}, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("vector has non-finite entries")
    return arr


@dataclass(frozen=True)
class ClassParams:
    """
    Parameters (eta, omega, omega_av) of a compressor family.

    Attributes:
        eta (float): Relative bias, in [0, 1).
        omega (float): Relative variance, >= 0.
        omega_av (float): Average relative variance after
            averaging n compressors, in [0, omega].
    """

    eta: float
    omega: float
    omega_av: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta < 1.0:
            raise ConfigurationError(
                f"eta must be in [0, 1), got {self.eta}"
            )
        if self.omega < 0.0:
            raise ConfigurationError(
                f"omega must be >= 0, got {self.omega}"
            )
        # rounding in omega / n may overshoot omega by an ulp
        if not 0.0 <= self.omega_av <= self.omega * (1 + 1e-12):
            raise ConfigurationError(
                f"omega_av must be in [0, omega={self.omega}], "
                f"got {self.omega_av}"
            )

    @property
    def total_error(self) -> float:
        """eta^2 + omega, the relative mean squared error bound."""
        return self.eta**2 + self.omega

    def to_dict(self) -> Dict[str, float]:
        return {
            "eta": self.eta,
            "omega": self.omega,
            "omega_av": self.omega_av,
        }


@dataclass(frozen=True)
class SparseMessage:
    """
    The compressed payload a worker puts on the wire.

    Attributes:
        dim (int): Ambient dimension d.
        indices (np.ndarray): Strictly increasing int64 indices.
        values (np.ndarray): Transmitted (unscaled) values.
        wire_bits (int): Bits on the wire for this message.
        scale (float): Receiver-side factor applied when
            densifying; not transmitted per coordinate.
    """

    dim: int
    indices: npt.NDArray[np.int64]
    values: DenseVector
    wire_bits: int
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ContractViolation(
                f"dim must be positive, got {self.dim}"
            )
        if self.indices.shape != self.values.shape:
            raise ContractViolation(
                "indices and values must have the same length"
            )
        if self.indices.size:
            if np.any(np.diff(self.indices) <= 0):
                raise ContractViolation(
                    "indices must be strictly increasing"
                )
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ContractViolation(
                    f"indices must lie in [0, {self.dim})"
                )

    @property
    def nnz(self) -> int:
        """Number of transmitted coordinates."""
        return int(self.indices.size)

    def entries(self) -> List[tuple]:
        """(index, value) pairs of the receiver-side vector."""
        return [
            (int(i), float(v) * self.scale)
            for i, v in zip(self.indices, self.values)
        ]

    def to_dense(self) -> DenseVector:
        out = np.zeros(self.dim, dtype=np.float64)
        if self.scale == 1.0:
            out[self.indices] = self.values
        else:
            out[self.indices] = self.scale * self.values
        return out

    @classmethod
    def from_dense(
        cls,
        vec: DenseVector,
        bits_per_coordinate: int = DEFAULT_BITS_PER_COORDINATE,
    ) -> "SparseMessage":
        """Sparsify *vec*, keeping its nonzero coordinates."""
        idx = np.flatnonzero(vec).astype(np.int64)
        return cls.from_support(
            vec, idx, bits_per_coordinate=bits_per_coordinate
        )

    @classmethod
    def from_support(
        cls,
        vec: DenseVector,
        support: npt.NDArray[np.int64],
        bits_per_coordinate: int = DEFAULT_BITS_PER_COORDINATE,
        scale: float = 1.0,
    ) -> "SparseMessage":
        """Message carrying ``vec[support]`` (support is sorted here)."""
        idx = np.sort(np.asarray(support, dtype=np.int64))
        return cls(
            dim=int(vec.shape[0]),
            indices=idx,
            values=np.asarray(vec[idx], dtype=np.float64),
            wire_bits=int(idx.size) * bits_per_coordinate,
            scale=scale,
        )

    @classmethod
    def empty(cls, dim: int, scale: float = 1.0) -> "SparseMessage":
        return cls(
            dim=dim,
            indices=np.zeros(0, dtype=np.int64),
            values=np.zeros(0, dtype=np.float64),
            wire_bits=0,
            scale=scale,
        )


@dataclass(frozen=True)
class SmoothnessProfile:
    """
    Smoothness and PL/KL constants of a finite-sum problem.

    Attributes:
        L_list (tuple): Per-function constants L_i > 0.
        L_tilde (float): Quadratic mean of the L_i (or the
            root of their sum with *root_sum*).
        L (float): Smoothness constant of f.
        mu (float): PL/KL constant (0 when unused).
    """

    L_list: tuple
    L_tilde: float
    L: float
    mu: float

    def __post_init__(self) -> None:
        if not self.L_list or min(self.L_list) <= 0:
            raise ConfigurationError(
                "L_list must be nonempty with positive entries"
            )
        if self.L <= 0 or self.L_tilde <= 0:
            raise ConfigurationError(
                f"L and L_tilde must be positive, got "
                f"L={self.L}, L_tilde={self.L_tilde}"
            )
        if self.L > self.L_tilde * (1 + 1e-12):
            raise ConfigurationError(
                f"L={self.L} must not exceed "
                f"L_tilde={self.L_tilde}"
            )
        if self.mu < 0 or self.mu > self.L * (1 + 1e-12):
            raise ConfigurationError(
                f"mu must be in [0, L={self.L}], got {self.mu}"
            )

    @classmethod
    def from_constants(
        cls,
        L_list: List[float],
        mu: float,
        root_sum: bool = False,
    ) -> "SmoothnessProfile":
        """Build a profile with L defaulting to L_tilde."""
        sq = [float(v) ** 2 for v in L_list]
        if root_sum:
            L_tilde = math.sqrt(sum(sq))
        else:
            L_tilde = math.sqrt(sum(sq) / len(sq))
        return cls(
            L_list=tuple(float(v) for v in L_list),
            L_tilde=L_tilde,
            L=L_tilde,
            mu=mu,
        )


@dataclass(frozen=True)
class TuneResult:
    """
    Derived constants for one algorithm configuration.

    Attributes:
        algorithm (Algorithm): Named configuration tuned for.
        mode (Mode): Guarantee the constants target.
        params (ClassParams): Compressor parameters used.
        lam (float): Control-variate scaling lambda.
        nu (float): Gradient-estimate scaling nu.
        r (float): Residual factor of the control variates.
        r_av (float): Residual factor after averaging.
        s (float): Young's-inequality constant.
        theta (float): Lyapunov weight (inf when r_av = 0).
        gamma (float): Step size (the upper bound).
        rate (Optional[float]): Linear rate, None for nonconvex.
    """

    algorithm: Algorithm
    mode: Mode
    params: ClassParams
    lam: float
    nu: float
    r: float
    r_av: float
    s: float
    theta: float
    gamma: Optional[float]
    rate: Optional[float]

    @property
    def sqrt_ratio(self) -> float:
        """sqrt(r_av / r), the key EF-BV vs EF21 factor."""
        if self.r == 0.0:
            return 0.0 if self.r_av == 0.0 else math.inf
        return math.sqrt(self.r_av / self.r)

    @property
    def lyapunov_weight(self) -> float:
        """gamma / (2 theta); zero when theta is infinite."""
        if self.gamma is None or math.isinf(self.theta):
            return 0.0
        return self.gamma / (2.0 * self.theta)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm.value,
            "mode": self.mode.value,
            **self.params.to_dict(),
            "lambda": self.lam,
            "nu": self.nu,
            "r": self.r,
            "r_av": self.r_av,
            "sqrt_r_av_over_r": self.sqrt_ratio,
            "s": self.s,
            "theta": self.theta,
            "gamma": self.gamma,
            "rate": self.rate,
        }


@dataclass(frozen=True)
class RoundRecord:
    """
    Metrics recorded at round t.

    Attributes:
        t (int): Round counter.
        bits_per_node (float): Cumulative wire bits per node.
        f_gap (float): f(x^t) + R(x^t) - f* - R*.
        grad_norm_sq (float): ||grad f(x^t)||^2.
        lyapunov (float): Psi^t.
        control_residual (float): mean_i ||grad f_i(x^t) - h_i^t||^2.
    """

    t: int
    bits_per_node: float
    f_gap: float
    grad_norm_sq: float
    lyapunov: float
    control_residual: float

    CSV_FIELDS = (
        "t",
        "bits_per_node",
        "f_gap",
        "grad_norm_sq",
        "lyapunov",
        "control_residual",
    )

    def to_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in self.CSV_FIELDS}


@dataclass
class EngineState:
    """
    Mutable state of one simulated run.

    Attributes:
        x (DenseVector): Server model x^t.
        h_list (np.ndarray): n x d matrix of control variates h_i^t.
        h (DenseVector): Server aggregate h^t.
        t (int): Round counter.
        bits_total (int): Cumulative wire bits over all workers.
        seed (int): Master seed the round streams derive from.
        last_g (Optional[DenseVector]): Gradient estimate g^t used
            by the latest step.
    """

    x: DenseVector
    h_list: npt.NDArray[np.float64]
    h: DenseVector
    t: int = 0
    bits_total: int = 0
    seed: int = 0
    last_g: Optional[DenseVector] = None

    def copy(self) -> "EngineState":
        return EngineState(
            x=self.x.copy(),
            h_list=self.h_list.copy(),
            h=self.h.copy(),
            t=self.t,
            bits_total=self.bits_total,
            seed=self.seed,
            last_g=(
                None if self.last_g is None else self.last_g.copy()
            ),
        )


@dataclass(frozen=True)
class ReferenceSolution:
    """
    High-precision solution used for optimality gaps.

    Unpacks as ``x_star, f_star, r_star = reference``.

    Attributes:
        x (DenseVector): Minimizer (or best iterate found).
        f_star (float): f(x).
        r_star (float): R(x).
        iterations (int): Proximal gradient steps taken.
        converged (bool): False when the iteration cap was hit.
    """

    x: DenseVector
    f_star: float
    r_star: float
    iterations: int = 0
    converged: bool = True

    @property
    def optimum(self) -> float:
        """f* + R*."""
        return self.f_star + self.r_star

    def __iter__(self) -> Iterator[Any]:
        return iter((self.x, self.f_star, self.r_star))


@dataclass(frozen=True)
class Shard:
    """
    Rows of the parent dataset held by one worker.

    Attributes:
        owner (int): Worker index in [0, n).
        rows (np.ndarray): Row indices into the parent dataset.
    """

    owner: int
    rows: npt.NDArray[np.int64] = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )

    @property
    def size(self) -> int:
        """N_i, the number of rows."""
        return int(self.rows.size)


# Type definitions for report rows
class TuningRow(TypedDict):
    """One column of the tuning report (an algorithm)."""

    label: str
    algorithm: str
    eta: float
    omega: float
    omega_av: float
    lam: float
    nu: float
    r: float
    r_av: float
    sqrt_ratio: float
    s: float
    gamma: Optional[float]


class CertificationRow(TypedDict):
    """One line of the certification report."""

    compressor: str
    claimed_eta: float
    claimed_omega: float
    claimed_omega_av: float
    eta_hat: float
    omega_hat: float
    omega_av_hat: float
    max_violation: float
    passed: bool

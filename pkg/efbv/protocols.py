"""Protocol definitions for compressor abstraction.

Defines :class:`Compressor` so that the engine and the certifier
are not locked to the built-in operator classes. Any class that
exposes ``dim``, ``name`` and the methods below satisfies the
protocol, e.g. a deliberately mis-scaled operator used as a
negative control.
"""

from dataclasses import dataclass
from typing import (
    List,
    Optional,
    Protocol,
    Tuple,
    runtime_checkable,
)

import numpy as np
import numpy.typing as npt

from .types import ClassParams, Dependence, DenseVector, SparseMessage


@dataclass(frozen=True)
class RoundContext:
    """
    Per-call information a compressor may need.

    Attributes:
        worker (int): Index of the calling worker.
        participants (Optional[frozenset]): Round-shared subset
            Omega drawn by the engine (sampling families only).
    """

    worker: int = 0
    participants: Optional[frozenset] = None


@runtime_checkable
class Compressor(Protocol):
    """Minimal interface every compression operator must satisfy.

    Attributes:
        dim: Ambient dimension d.
        name: Short human-readable label, e.g. ``comp-(1,56)``.
    """

    dim: int
    name: str

    def compress(
        self,
        x: DenseVector,
        rng: np.random.Generator,
        context: Optional[RoundContext] = None,
        bits_per_coordinate: int = 64,
    ) -> SparseMessage:
        """Draw one realization C(x) as a wire message."""
        ...

    def sample_batch(
        self,
        x: DenseVector,
        rng: np.random.Generator,
        size: int,
    ) -> npt.NDArray[np.float64]:
        """Return *size* i.i.d. realizations as a size x d matrix."""
        ...

    def outcomes(
        self, x: DenseVector
    ) -> List[Tuple[float, DenseVector]]:
        """All (probability, C(x)) pairs of a finite law."""
        ...

    def outcome_count(self) -> int:
        """Number of equally likely outcomes ``outcomes`` yields."""
        ...

    def params(
        self, n: int, dependence: Dependence
    ) -> ClassParams:
        """Closed-form (eta, omega, omega_av) for n workers."""
        ...

"""
Synchronous round loop of EF-BV.

One round, for every worker i in fixed order:

    d_i = C_i(grad f_i(x) - h_i)        (compressed on the wire)
    h_i = h_i + lam * d_i

and on the server:

    d = mean_i d_i
    g = h + nu * d
    h = h + lam * d
    x = prox_{gamma R}(x - gamma * g)

EF21 and DIANA are the same loop with (lam, nu) = (lam*, lam*)
and (lam*, 1). Worker i's compressor at round t draws from the
stream keyed by (seed, i, t) and the shared participant subset
of sampling compressors from the round stream keyed by (seed, t),
so configurations differing only in (lam, nu, gamma) see the same
randomness.
"""

import math
import time
from dataclasses import dataclass
from typing import (
    Callable,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from loguru import logger

from . import rng as rng_streams
from .certifier import reference_solution
from .compressors import CompressorSpec
from .errors import (
    ConfigurationError,
    DivergenceError,
    MissingReferenceError,
    NumericalError,
)
from .problems import LogisticProblem, prox, smoothness
from .protocols import RoundContext
from .tuning import tune, validate_algorithm, validate_mode
from .types import (
    DEFAULT_BITS_PER_COORDINATE,
    Algorithm,
    Dependence,
    DenseVector,
    EngineState,
    HInit,
    Mode,
    ReferenceSolution,
    RoundRecord,
    TuneResult,
)

DIVERGENCE_THRESHOLD = 1e12


def _residual(grads: np.ndarray, h_list: np.ndarray) -> float:
    diff = grads - h_list
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


@dataclass(frozen=True)
class RunConfig:
    """
    Everything that determines one simulated run.

    Attributes:
        compressor (CompressorSpec): Operator every worker applies.
        dependence (Dependence): Coupling of the n compressors.
        algorithm (Algorithm): EF-BV, EF21 or DIANA.
        mode (Mode): Guarantee the step size is tuned for.
        rounds (int): Number of rounds T.
        seed (int): Master seed of every random stream.
        lam (Optional[float]): Override of lambda.
        nu (Optional[float]): Override of nu.
        gamma (Optional[float]): Step size; defaults to the bound.
        h_init (HInit): Control-variate initialization.
        x0 (Optional[Tuple[float, ...]]): Start point, default 0.
        cadence (int): Record metrics every *cadence* rounds.
        bits_per_coordinate (int): Wire cost of one coordinate.
        root_sum_L (bool): Use sqrt(sum L_i^2) for L_tilde.
    """

    compressor: CompressorSpec
    dependence: Dependence = Dependence.INDEPENDENT
    algorithm: Algorithm = Algorithm.EF_BV
    mode: Mode = Mode.PL
    rounds: int = 1000
    seed: int = 0
    lam: Optional[float] = None
    nu: Optional[float] = None
    gamma: Optional[float] = None
    h_init: HInit = HInit.ZEROS
    x0: Optional[Tuple[float, ...]] = None
    cadence: int = 10
    bits_per_coordinate: int = DEFAULT_BITS_PER_COORDINATE
    root_sum_L: bool = False

    def __post_init__(self) -> None:
        validate_algorithm(self.algorithm)
        validate_mode(self.mode)
        if self.rounds < 0:
            raise ConfigurationError(
                f"rounds must be >= 0, got {self.rounds}"
            )
        if self.seed < 0:
            raise ConfigurationError(
                f"seed must be >= 0, got {self.seed}"
            )
        for name in ("lam", "nu"):
            value = getattr(self, name)
            if value is not None and not 0.0 < value <= 1.0:
                raise ConfigurationError(
                    f"{name} must be in (0, 1], got {value}"
                )
        if self.gamma is not None and self.gamma <= 0.0:
            raise ConfigurationError(
                f"gamma must be positive, got {self.gamma}"
            )
        if self.cadence < 1:
            raise ConfigurationError(
                f"cadence must be >= 1, got {self.cadence}"
            )
        if self.bits_per_coordinate < 1:
            raise ConfigurationError(
                f"bits_per_coordinate must be >= 1, got "
                f"{self.bits_per_coordinate}"
            )


class Simulator:
    """
    Drives EF-BV rounds of one configuration on one problem.

    The constructor derives the compressor parameters, the
    smoothness profile and the tuned constants once; :meth:`step`
    and :meth:`run` then reuse them.

    Attributes:
        config (RunConfig): The run configuration.
        problem (LogisticProblem): The distributed objective.
        compressor: Built operator shared by all workers.
        tuned (TuneResult): lambda, nu, gamma and derived constants.
        gamma (float): Step size actually used.
    """

    def __init__(
        self,
        config: RunConfig,
        problem: LogisticProblem,
        reference: Optional[ReferenceSolution] = None,
        auto_reference: bool = True,
    ) -> None:
        if config.compressor.d != problem.dim:
            raise ConfigurationError(
                f"compressor dimension {config.compressor.d} does "
                f"not match problem dimension {problem.dim}"
            )
        self._check_mode(config.mode, problem)
        self.config = config
        self.problem = problem
        self.n = problem.n_workers
        self.compressor = config.compressor.build()
        self._joint = bool(getattr(self.compressor, "joint", False))
        params = self.compressor.params(self.n, config.dependence)
        self.profile = smoothness(problem, config.root_sum_L)
        self.tuned: TuneResult = tune(
            params,
            self.profile,
            algorithm=config.algorithm,
            mode=config.mode,
            lam=config.lam,
            nu=config.nu,
            gamma=config.gamma,
        )
        assert self.tuned.gamma is not None
        self.gamma: float = self.tuned.gamma
        self._reference = reference
        self._auto_reference = auto_reference
        self.final_state: Optional[EngineState] = None

    @staticmethod
    def _check_mode(mode: Mode, problem: LogisticProblem) -> None:
        if mode is not Mode.KL and not problem.regularizer.is_zero:
            raise ConfigurationError(
                f"mode {mode.value} requires R = 0; use mode kl "
                f"for a nonsmooth regularizer"
            )
        if mode is not Mode.NONCONVEX and not problem.is_convex:
            raise ConfigurationError(
                "the nonconvex penalty is only supported in "
                "nonconvex mode"
            )

    @property
    def lam(self) -> float:
        return self.tuned.lam

    @property
    def nu(self) -> float:
        return self.tuned.nu

    @property
    def reference(self) -> ReferenceSolution:
        """The reference solution, solved on first use if allowed."""
        if self._reference is None:
            if not self._auto_reference:
                raise MissingReferenceError(
                    "optimality gaps need f*; call "
                    "certifier.reference_solution(problem) first"
                )
            logger.info("No reference supplied; solving for f*")
            self._reference = reference_solution(self.problem)
        return self._reference

    # -- state ------------------------------------------------------

    def init_state(self) -> EngineState:
        """x^0 (zero by default), h_i^0 per policy, h^0 their mean."""
        d = self.problem.dim
        if self.config.x0 is None:
            x = np.zeros(d)
        else:
            x = np.asarray(self.config.x0, dtype=np.float64)
            if x.shape != (d,):
                raise ConfigurationError(
                    f"x0 must have length {d}, got shape {x.shape}"
                )
        if self.config.h_init is HInit.LOCAL_GRADIENT:
            h_list = self.problem.local_gradients(x)
        else:
            h_list = np.zeros((self.n, d))
        return EngineState(
            x=x,
            h_list=h_list,
            h=h_list.mean(axis=0),
            seed=self.config.seed,
        )

    # -- one round ---------------------------------------------------

    def _aggregate(
        self,
        state: EngineState,
        grads: np.ndarray,
        worker_rng: Callable[[int], np.random.Generator],
        round_rng: np.random.Generator,
    ) -> Tuple[np.ndarray, DenseVector, int]:
        """Compress every worker's residual.

        Returns the stacked d_i, their mean and the wire bits.
        """
        participants = None
        if self._joint:
            participants = self.compressor.draw_participants(  # type: ignore[attr-defined]
                round_rng
            )
        messages = np.zeros_like(state.h_list)
        total = np.zeros(self.problem.dim)
        bits = 0
        for i in range(self.n):
            msg = self.compressor.compress(
                grads[i] - state.h_list[i],
                worker_rng(i),
                RoundContext(worker=i, participants=participants),
                self.config.bits_per_coordinate,
            )
            messages[i] = msg.to_dense()
            total += messages[i]
            bits += msg.wire_bits
        return messages, total / self.n, bits

    def step(
        self, state: EngineState
    ) -> Tuple[EngineState, Optional[RoundRecord]]:
        """Execute one round; return the new state and, on the
        cadence (or at t = T), its record."""
        t = state.t
        seed = state.seed
        grads = self.problem.local_gradients(state.x)
        messages, d_mean, bits = self._aggregate(
            state,
            grads,
            lambda i: rng_streams.worker_stream(seed, i, t),
            rng_streams.round_stream(seed, t),
        )

        lam, nu, gamma = self.lam, self.nu, self.gamma
        new = state.copy()
        new.h_list += lam * messages
        g = state.h + nu * d_mean
        new.h = state.h + lam * d_mean
        new.x = prox(
            self.problem.regularizer, gamma, state.x - gamma * g
        )
        new.last_g = g
        new.t = t + 1
        new.bits_total = state.bits_total + bits

        norm = float(np.linalg.norm(new.x))
        if not math.isfinite(norm) or norm > DIVERGENCE_THRESHOLD:
            raise DivergenceError(new.t, gamma)

        record = None
        if new.t % self.config.cadence == 0 or (
            new.t == self.config.rounds
        ):
            record = self.record(new)
        return new, record

    def gradient_estimate(
        self, state: EngineState, draw: int
    ) -> DenseVector:
        """g^{t+1} at a frozen *state* for compression draw *draw*.

        Uses the probe streams, so repeated calls with distinct
        *draw* give i.i.d. realizations of the gradient estimate.
        """
        seed = state.seed
        grads = self.problem.local_gradients(state.x)
        _, d_mean, _ = self._aggregate(
            state,
            grads,
            lambda i: rng_streams.stream(
                seed, rng_streams.PROBE, i + 1, draw
            ),
            rng_streams.stream(seed, rng_streams.PROBE, 0, draw),
        )
        return state.h + self.nu * d_mean

    # -- metrics -------------------------------------------------------

    def control_residual(self, state: EngineState) -> float:
        """mean_i ||grad f_i(x) - h_i||^2."""
        return _residual(
            self.problem.local_gradients(state.x), state.h_list
        )

    def lyapunov(self, state: EngineState) -> float:
        """Psi = f(x) + R(x) - f* - R* + gamma/(2 theta) * G."""
        return lyapunov(
            state,
            self.problem,
            self.tuned,
            self.reference.optimum,
        )

    def record(self, state: EngineState) -> RoundRecord:
        """Full metrics at *state* (all workers' gradients at x)."""
        grads = self.problem.local_gradients(state.x)
        grad = grads.mean(axis=0)
        residual = _residual(grads, state.h_list)
        f_gap = (
            self.problem.composite_value(state.x)
            - self.reference.optimum
        )
        if not math.isfinite(f_gap) or f_gap > DIVERGENCE_THRESHOLD:
            raise DivergenceError(state.t, self.gamma)
        lyap = f_gap + self.tuned.lyapunov_weight * residual
        return RoundRecord(
            t=state.t,
            bits_per_node=state.bits_total / self.n,
            f_gap=f_gap,
            grad_norm_sq=float(grad @ grad),
            lyapunov=lyap,
            control_residual=residual,
        )

    # -- driver --------------------------------------------------------

    def run(
        self,
        callback: Optional[Callable[[EngineState], None]] = None,
    ) -> List[RoundRecord]:
        """Run T rounds from :meth:`init_state`.

        Args:
            callback: Called with every state, initial included.

        Returns:
            Records at t = 0, every *cadence* rounds and t = T.

        Raises:
            DivergenceError: with the records gathered so far.
        """
        cfg = self.config
        logger.info(
            f"Running {cfg.algorithm.value} with "
            f"{self.compressor.name}: n={self.n}, T={cfg.rounds}, "
            f"seed={cfg.seed}, lambda={self.lam:.4g}, "
            f"nu={self.nu:.4g}, gamma={self.gamma:.4g}"
        )
        start = time.perf_counter()
        state = self.init_state()
        if callback is not None:
            callback(state)
        records: List[RoundRecord] = []
        try:
            records.append(self.record(state))
            for _ in range(cfg.rounds):
                state, rec = self.step(state)
                if callback is not None:
                    callback(state)
                if rec is not None:
                    records.append(rec)
        except DivergenceError as exc:
            exc.records = records
            logger.warning(
                f"Run diverged at t={exc.t}; keeping "
                f"{len(records)} records"
            )
            raise
        except NumericalError as exc:
            raise DivergenceError(
                state.t + 1, self.gamma, records
            ) from exc
        self.final_state = state
        logger.success(
            f"Run finished: {cfg.rounds} rounds in "
            f"{time.perf_counter() - start:.2f}s, "
            f"final f_gap={records[-1].f_gap:.3e}"
        )
        return records


# -- module-level operations ----------------------------------------


def init(
    config: RunConfig, problem: LogisticProblem
) -> EngineState:
    """Initial state of *config* on *problem*."""
    return Simulator(config, problem, auto_reference=False).init_state()


def step(
    state: EngineState,
    config: RunConfig,
    problem: LogisticProblem,
    reference: Optional[ReferenceSolution] = None,
) -> Tuple[EngineState, Optional[RoundRecord]]:
    """One round. Prefer :class:`Simulator` inside loops."""
    return Simulator(config, problem, reference).step(state)


def run(
    config: RunConfig,
    problem: LogisticProblem,
    reference: Optional[ReferenceSolution] = None,
) -> List[RoundRecord]:
    """Records of a full run; deterministic given the seed."""
    return Simulator(config, problem, reference).run()


def lyapunov(
    state: EngineState,
    problem: LogisticProblem,
    tuned: TuneResult,
    reference_fstar: Optional[float],
) -> float:
    """Psi^t for *state*.

    *reference_fstar* is f* + R* from the reference solution. The
    control-variate term has weight gamma/(2 theta), zero when
    theta is infinite.
    """
    if reference_fstar is None:
        raise MissingReferenceError(
            "the Lyapunov function needs f*; call "
            "certifier.reference_solution(problem) first"
        )
    gap = problem.composite_value(state.x) - reference_fstar
    weight = tuned.lyapunov_weight
    if weight == 0.0:
        return gap
    return gap + weight * _residual(
        problem.local_gradients(state.x), state.h_list
    )


def average_records(
    traces: Sequence[List[RoundRecord]],
) -> List[RoundRecord]:
    """Seed-average traces recorded on the same rounds."""
    if not traces:
        raise ConfigurationError("no traces to average")
    length = min(len(trace) for trace in traces)
    out = []
    for j in range(length):
        rows = [trace[j] for trace in traces]
        if len({r.t for r in rows}) != 1:
            raise ConfigurationError(
                f"traces are not aligned at record {j}"
            )
        out.append(
            RoundRecord(
                t=rows[0].t,
                **{
                    name: float(
                        np.mean([getattr(r, name) for r in rows])
                    )
                    for name in RoundRecord.CSV_FIELDS[1:]
                },
            )
        )
    return out


def bits_to_target(
    records: Sequence[RoundRecord], target: float
) -> Optional[float]:
    """Bits per node at the first record with f_gap <= target."""
    for rec in records:
        if rec.f_gap <= target:
            return rec.bits_per_node
    return None

"""Independent oracles for the claims the simulator relies on.

* Monte Carlo estimates of (eta, omega) on probe vectors and of
  omega_av on probe tuples, judged against the closed forms with
  a tolerance of four standard errors.
* Exact moments by enumerating a compressor's finite law.
* A high-precision proximal gradient solve for f* and R*.
* A central finite-difference check of the local gradients.

The omega_av estimate is the largest ratio over the probes tried,
so it is a lower bound on the tightest constant, not the constant
itself.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import (
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.special import comb

from . import rng as rng_streams
from .compressors import CompressorSpec
from .errors import ConfigurationError, EnumerationTooLarge
from .problems import LogisticProblem, prox, smoothness
from .protocols import Compressor
from .types import (
    CertificationRow,
    ClassParams,
    Dependence,
    DenseVector,
    ReferenceSolution,
    as_dense,
)

SE_MULTIPLIER = 4.0
ABSOLUTE_SLACK = 1e-9
ENUMERATION_LIMIT = 10**6

CompressorLike = Union[CompressorSpec, Compressor]


def _build(compressor: CompressorLike) -> Compressor:
    if isinstance(compressor, CompressorSpec):
        return compressor.build()
    return compressor


def _within(estimate: float, claimed: float, se: float) -> bool:
    return estimate - claimed <= SE_MULTIPLIER * se + ABSOLUTE_SLACK


@dataclass
class EstimateReport:
    """
    Monte Carlo estimate of a compressor's class parameters.

    Attributes:
        compressor (str): Operator name.
        claimed (ClassParams): Closed-form parameters checked.
        eta_hat (float): max over probes of ||mean - x|| / ||x||.
        omega_hat (float): max over probes of var / ||x||^2.
        omega_av_hat (float): max ratio over probe tuples.
        samples (int): Draws per probe.
        probe_count (int): Probes actually used.
        max_violation (float): Largest estimate - claimed.
        passed (bool): Every estimate within tolerance.
        skipped (int): Zero probes skipped.
    """

    compressor: str
    claimed: ClassParams
    eta_hat: float = 0.0
    omega_hat: float = 0.0
    omega_av_hat: float = 0.0
    samples: int = 0
    probe_count: int = 0
    max_violation: float = -math.inf
    passed: bool = True
    skipped: int = 0
    notes: List[str] = field(default_factory=list)

    def to_row(self) -> CertificationRow:
        return CertificationRow(
            compressor=self.compressor,
            claimed_eta=self.claimed.eta,
            claimed_omega=self.claimed.omega,
            claimed_omega_av=self.claimed.omega_av,
            eta_hat=self.eta_hat,
            omega_hat=self.omega_hat,
            omega_av_hat=self.omega_av_hat,
            max_violation=self.max_violation,
            passed=self.passed,
        )


class AverageEstimate(NamedTuple):
    """omega_av estimate with its standard error and verdict."""

    estimate: float
    standard_error: float
    claimed: float
    passed: bool


class ExactMoments(NamedTuple):
    """Exact moments of a finite law around the input."""

    mean: DenseVector
    variance: float
    squared_bias: float
    mse: float


# -- probes ---------------------------------------------------------


def probe_vectors(
    d: int, probes: int, seed: int
) -> List[DenseVector]:
    """Gaussian probes plus one-hot, uniform-magnitude and
    geometric-decay shapes."""
    gen = rng_streams.stream(seed, rng_streams.PROBE)
    out = [gen.standard_normal(d) for _ in range(probes)]
    one_hot = np.zeros(d)
    one_hot[0] = 1.0
    signs = gen.choice(np.array([-1.0, 1.0]), size=d)
    out.append(one_hot)
    out.append(signs)
    out.append(0.5 ** np.arange(d))
    return out


def probe_tuples(
    d: int, n: int, probes: int, seed: int
) -> List[npt.NDArray[np.float64]]:
    """n x d probe tuples (x_1, ..., x_n) for the averaged bound.

    Includes a shared direction scaled by centered coefficients,
    whose average is zero (extremal for nice sampling), and a
    tuple of identical uniform-magnitude vectors.
    """
    gen = rng_streams.stream(seed, rng_streams.PROBE, 0, 1)
    out = [gen.standard_normal((n, d)) for _ in range(probes)]
    direction = gen.standard_normal(d)
    centered = np.arange(n) - (n - 1) / 2.0
    out.append(np.outer(centered, direction))
    out.append(np.tile(np.ones(d), (n, 1)))
    return out


# -- Monte Carlo ----------------------------------------------------


def _spread(
    batch: npt.NDArray[np.float64],
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Sample mean and per-draw squared deviations of a batch.

    A batch of identical draws is centered on its first row, so
    deterministic operators report exactly zero spread.
    """
    first = batch[0]
    if np.array_equal(batch, np.broadcast_to(first, batch.shape)):
        return first.copy(), np.zeros(batch.shape[0])
    mean = batch.mean(axis=0)
    centered = batch - mean
    return mean, np.einsum("ij,ij->i", centered, centered)


def _moments(
    batch: npt.NDArray[np.float64], x: DenseVector
) -> Tuple[float, float, float, float]:
    """(bias, bias se, variance, variance se) of one probe."""
    size = batch.shape[0]
    mean, sq = _spread(batch)
    var = float(sq.sum() / (size - 1))
    var_se = float(sq.std(ddof=1) / math.sqrt(size))
    bias = float(np.linalg.norm(mean - x))
    bias_se = math.sqrt(var / size)
    return bias, bias_se, var, var_se


def estimate_class_params(
    compressor: CompressorLike,
    d: Optional[int] = None,
    probes: int = 4,
    samples: int = 100_000,
    seed: int = 0,
    n: Optional[int] = None,
    dependence: Dependence = Dependence.INDEPENDENT,
    extra_probes: Sequence[DenseVector] = (),
) -> EstimateReport:
    """Estimate (eta, omega) and, for n > 1, omega_av by sampling.

    Args:
        compressor: Spec or operator under test.
        d: Dimension; defaults to the operator's.
        probes: Number of random Gaussian probes (shaped probes
            are always added).
        samples: Draws per probe, at least 1000.
        seed: Master seed of the probe streams.
        n: Worker count the claimed parameters refer to; defaults
            to the sampling pool size for nice sampling, else 1.
        dependence: Coupling for the averaged estimate.
        extra_probes: Additional user probes; zero ones are
            skipped.

    Returns:
        An :class:`EstimateReport` judged against the closed form.
    """
    op = _build(compressor)
    d = op.dim if d is None else d
    if d != op.dim:
        raise ConfigurationError(
            f"d={d} does not match compressor dimension {op.dim}"
        )
    if probes < 1 or samples < 1000:
        raise ConfigurationError(
            f"need probes >= 1 and samples >= 1000, got "
            f"probes={probes}, samples={samples}"
        )
    if n is None:
        n = 1
        if getattr(op, "joint", False):
            n = int(getattr(_unwrap_sampling(op)[0], "n", 1))
    claimed = op.params(n, dependence)
    report = EstimateReport(
        compressor=op.name, claimed=claimed, samples=samples
    )
    vectors = probe_vectors(d, probes, seed) + [
        as_dense(v, d) for v in extra_probes
    ]
    for j, x in enumerate(vectors):
        norm_sq = float(x @ x)
        if norm_sq == 0.0:
            report.skipped += 1
            report.notes.append(f"probe {j} is zero; skipped")
            logger.warning(f"{op.name}: zero probe {j} skipped")
            continue
        gen = rng_streams.stream(seed, rng_streams.PROBE, j + 1, 2)
        batch = op.sample_batch(x, gen, samples)
        bias, bias_se, var, var_se = _moments(batch, x)
        eta_j = bias / math.sqrt(norm_sq)
        omega_j = var / norm_sq
        report.eta_hat = max(report.eta_hat, eta_j)
        report.omega_hat = max(report.omega_hat, omega_j)
        report.max_violation = max(
            report.max_violation,
            eta_j - claimed.eta,
            omega_j - claimed.omega,
        )
        ok = _within(
            eta_j, claimed.eta, bias_se / math.sqrt(norm_sq)
        ) and _within(omega_j, claimed.omega, var_se / norm_sq)
        if not ok:
            logger.debug(
                f"{op.name}: probe {j} exceeds claim "
                f"(eta {eta_j:.4g} vs {claimed.eta:.4g}, "
                f"omega {omega_j:.4g} vs {claimed.omega:.4g})"
            )
        report.passed = report.passed and ok
        report.probe_count += 1

    if n > 1:
        avg = omega_av_report(
            op, n, dependence, probes, samples, seed
        )
        report.omega_av_hat = avg.estimate
        report.max_violation = max(
            report.max_violation, avg.estimate - avg.claimed
        )
        report.passed = report.passed and avg.passed
    else:
        report.omega_av_hat = report.omega_hat
    return report


def _unwrap_sampling(op: Compressor) -> Tuple[Compressor, float]:
    """Innermost joint operator and the product of scalings."""
    scale = 1.0
    while hasattr(op, "inner"):
        scale *= float(getattr(op, "lam"))
        op = getattr(op, "inner")
    return op, scale


def _average_batch(
    ops: Sequence[Compressor],
    xs: npt.NDArray[np.float64],
    dependence: Dependence,
    samples: int,
    seed: int,
    tag: int,
) -> npt.NDArray[np.float64]:
    """samples x d draws of (1/n) sum_i C_i(x_i)."""
    n = len(ops)
    joint = getattr(ops[0], "joint", False)
    if dependence is Dependence.JOINT_NICE and joint:
        core, scale = _unwrap_sampling(ops[0])
        gen = rng_streams.stream(seed, rng_streams.PROBE, 0, tag)
        masks = core.participation_masks(gen, samples)  # type: ignore[attr-defined]
        return (scale / core.m) * (masks @ xs)  # type: ignore[attr-defined]
    total = np.zeros((samples, xs.shape[1]))
    for i, op in enumerate(ops):
        gen = rng_streams.stream(
            seed, rng_streams.PROBE, i + 1, tag
        )
        total += op.sample_batch(xs[i], gen, samples)
    return total / n


def _as_ops(
    compressors: Union[CompressorLike, Sequence[CompressorLike]],
    n: Optional[int],
) -> List[Compressor]:
    if isinstance(compressors, (list, tuple)):
        ops = [_build(c) for c in compressors]
        if n is not None and n != len(ops):
            raise ConfigurationError(
                f"got {len(ops)} compressors for n={n}"
            )
        return ops
    if n is None or n < 1:
        raise ConfigurationError(
            f"worker count n must be >= 1, got {n}"
        )
    op = _build(compressors)  # type: ignore[arg-type]
    return [op] * n


def omega_av_report(
    compressors: Union[CompressorLike, Sequence[CompressorLike]],
    n: Optional[int] = None,
    dependence: Dependence = Dependence.INDEPENDENT,
    probes: int = 4,
    samples: int = 100_000,
    seed: int = 0,
) -> AverageEstimate:
    """Empirical omega_av with its standard error and verdict."""
    ops = _as_ops(compressors, n)
    n = len(ops)
    d = ops[0].dim
    claimed = ops[0].params(n, dependence).omega_av
    best, best_se, passed = 0.0, 0.0, True
    for j, xs in enumerate(probe_tuples(d, n, probes, seed)):
        denom = float(np.einsum("ij,ij->", xs, xs)) / n
        if denom == 0.0:
            logger.warning(f"zero probe tuple {j} skipped")
            continue
        batch = _average_batch(
            ops, xs, dependence, samples, seed, 10 + j
        )
        _, sq = _spread(batch)
        ratio = float(sq.sum() / (samples - 1)) / denom
        se = float(sq.std(ddof=1) / math.sqrt(samples)) / denom
        passed = passed and _within(ratio, claimed, se)
        if ratio > best:
            best, best_se = ratio, se
    logger.debug(
        f"omega_av estimate {best:.4g} (se {best_se:.2g}) vs "
        f"claimed {claimed:.4g} for n={n}"
    )
    return AverageEstimate(best, best_se, claimed, passed)


def estimate_omega_av(
    compressors: Union[CompressorLike, Sequence[CompressorLike]],
    n: Optional[int] = None,
    dependence: Dependence = Dependence.INDEPENDENT,
    probes: int = 4,
    samples: int = 100_000,
    seed: int = 0,
) -> float:
    """max over probe tuples of E||avg - E avg||^2 / mean ||x_i||^2.

    *compressors* is either one compressor shared by n workers or
    a list of n compressors.
    """
    return omega_av_report(
        compressors, n, dependence, probes, samples, seed
    ).estimate


# -- exact enumeration ----------------------------------------------


def _moments_of_law(
    weights: npt.NDArray[np.float64],
    values: npt.NDArray[np.float64],
    target: DenseVector,
) -> ExactMoments:
    mean = weights @ values
    centered = values - mean
    variance = float(
        weights @ np.einsum("ij,ij->i", centered, centered)
    )
    off = values - target
    mse = float(weights @ np.einsum("ij,ij->i", off, off))
    bias = mean - target
    return ExactMoments(mean, variance, float(bias @ bias), mse)


def enumerate_exact(
    compressor: CompressorLike,
    x: DenseVector,
    limit: int = ENUMERATION_LIMIT,
) -> ExactMoments:
    """Exact mean, variance, squared bias and E||C(x) - x||^2.

    Raises:
        EnumerationTooLarge: when the law has more than *limit*
            outcomes.
    """
    op = _build(compressor)
    x = as_dense(x, op.dim)
    count = op.outcome_count()
    if count > limit:
        raise EnumerationTooLarge(count, limit)
    pairs = op.outcomes(x)
    weights = np.array([w for w, _ in pairs])
    values = np.vstack([v for _, v in pairs])
    return _moments_of_law(weights, values, x)


def enumerate_exact_average(
    compressors: Union[CompressorLike, Sequence[CompressorLike]],
    xs: npt.NDArray[np.float64],
    dependence: Dependence = Dependence.INDEPENDENT,
    limit: int = ENUMERATION_LIMIT,
) -> ExactMoments:
    """Exact moments of (1/n) sum_i C_i(x_i) around mean_i x_i.

    Joint nice sampling enumerates the participant subsets;
    independent compressors combine per-worker exact moments,
    whose variances add.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ops = _as_ops(compressors, xs.shape[0])
    n = len(ops)
    target = xs.mean(axis=0)
    if dependence is Dependence.JOINT_NICE and getattr(
        ops[0], "joint", False
    ):
        core, scale = _unwrap_sampling(ops[0])
        m = core.m  # type: ignore[attr-defined]
        count = comb(n, m, exact=True)
        if count > limit:
            raise EnumerationTooLarge(count, limit)
        subsets = list(itertools.combinations(range(n), m))
        values = np.vstack(
            [(scale / m) * xs[list(s)].sum(axis=0) for s in subsets]
        )
        weights = np.full(len(subsets), 1.0 / len(subsets))
        return _moments_of_law(weights, values, target)

    per_worker = [
        enumerate_exact(op, xs[i], limit) for i, op in enumerate(ops)
    ]
    mean = np.mean([m.mean for m in per_worker], axis=0)
    variance = sum(m.variance for m in per_worker) / n**2
    bias = mean - target
    sq_bias = float(bias @ bias)
    return ExactMoments(mean, variance, sq_bias, variance + sq_bias)


# -- reference solution ---------------------------------------------


def reference_solution(
    problem: LogisticProblem,
    tol: float = 1e-10,
    max_iter: int = 10**6,
    x0: Optional[DenseVector] = None,
) -> ReferenceSolution:
    """Deterministic proximal gradient descent with gamma = 1/L.

    Stops when ||x^{t+1} - x^t|| / gamma <= tol. For a nonconvex
    problem the returned values are the lowest objective seen,
    an estimate of f_inf.
    """
    profile = smoothness(problem)
    gamma = 1.0 / profile.L
    reg = problem.regularizer
    x = np.zeros(problem.dim) if x0 is None else as_dense(
        x0, problem.dim
    )
    track_min = not problem.is_convex
    best_x, best_val = x, problem.composite_value(x)
    logger.info(
        f"Solving reference: d={problem.dim}, "
        f"n={problem.n_workers}, gamma={gamma:.4g}, tol={tol:g}"
    )
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_new = prox(reg, gamma, x - gamma * problem.gradient(x))
        moved = float(np.linalg.norm(x_new - x)) / gamma
        x = x_new
        if track_min:
            val = problem.composite_value(x)
            if val < best_val:
                best_x, best_val = x, val
        if moved <= tol:
            converged = True
            break
    if not track_min:
        best_x = x
    if not converged:
        logger.warning(
            f"Reference solve hit the iteration cap ({max_iter}); "
            f"returning the best iterate"
        )
    f_star = problem.value(best_x)
    r_star = reg.value(best_x)
    logger.success(
        f"Reference solved in {it} iterations: "
        f"f*+R*={f_star + r_star:.12g}"
    )
    return ReferenceSolution(
        x=best_x,
        f_star=f_star,
        r_star=r_star,
        iterations=it,
        converged=converged,
    )


# -- gradients ------------------------------------------------------


def finite_difference_check(
    problem: LogisticProblem,
    x: DenseVector,
    worker: int = 0,
    step: Optional[float] = None,
) -> float:
    """Relative error of grad f_i(x) against central differences.

    The step defaults to 1e-6 * (1 + ||x||); the error is relative
    to max(||grad f_i(x)||, 1).
    """
    x = as_dense(x, problem.dim)
    if step is None:
        step = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    h = step
    analytic = problem.local_gradient(worker, x)
    numeric = np.empty(problem.dim)
    for k in range(problem.dim):
        e = np.zeros(problem.dim)
        e[k] = h
        numeric[k] = (
            problem.local_value(worker, x + e)
            - problem.local_value(worker, x - e)
        ) / (2.0 * h)
    err = float(np.linalg.norm(numeric - analytic))
    return err / max(float(np.linalg.norm(analytic)), 1.0)


# -- catalog certification ------------------------------------------


def certify(
    compressors: Sequence[CompressorLike],
    n: int,
    dependence: Dependence = Dependence.INDEPENDENT,
    probes: int = 4,
    samples: int = 100_000,
    seed: int = 0,
) -> List[EstimateReport]:
    """Certify every compressor; sampling families use their own
    joint coupling."""
    reports = []
    for c in compressors:
        op = _build(c)
        dep = (
            Dependence.JOINT_NICE
            if getattr(op, "joint", False)
            else dependence
        )
        logger.info(f"Certifying {op.name} (n={n}, {dep.value})")
        rep = estimate_class_params(
            op,
            probes=probes,
            samples=samples,
            seed=seed,
            n=n,
            dependence=dep,
        )
        verdict = "PASS" if rep.passed else "FAIL"
        logger.info(
            f"{op.name}: {verdict} (max violation "
            f"{rep.max_violation:.3g})"
        )
        reports.append(rep)
    return reports

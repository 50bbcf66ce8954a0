"""Derived constants of the linear and sublinear guarantees.

Pure functions computing residual factors, the optimal scalings
lambda* and nu*, the Young's-inequality constants (s, theta), the
largest admissible step size and the guaranteed rate factor, plus
:func:`tune`, which assembles them for EF-BV, EF21 or DIANA.

A residual factor r_av of zero (exact aggregation) makes theta
infinite; the Lyapunov correction term then has coefficient zero
and the step-size bound reduces to 1/L (1/(2L) in KL mode).
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

from loguru import logger

from .compressors import (
    CompressorSpec,
    lambda_star,
    theoretical_params,
)
from .errors import ConfigurationError
from .types import (
    Algorithm,
    ClassParams,
    Mode,
    SmoothnessProfile,
    TuneResult,
    TuningRow,
)


def residual_factor(scale: float, eta: float, variance: float) -> float:
    """Return (1 - scale + scale*eta)^2 + scale^2 * variance.

    Args:
        scale: lambda (with omega) or nu (with omega_av), in (0, 1].
        eta: Relative bias in [0, 1).
        variance: omega or omega_av, >= 0.

    Returns:
        The residual factor r (or r_av).
    """
    if not 0.0 < scale <= 1.0:
        raise ConfigurationError(
            f"scale must be in (0, 1], got {scale}"
        )
    if not 0.0 <= eta < 1.0:
        raise ConfigurationError(
            f"eta must be in [0, 1), got {eta}"
        )
    if variance < 0.0:
        raise ConfigurationError(
            f"variance must be >= 0, got {variance}"
        )
    return (1.0 - scale + scale * eta) ** 2 + scale**2 * variance


def nu_star(eta: float, omega_av: float) -> float:
    """Scaling in (0, 1] minimizing r_av."""
    return lambda_star(eta, omega_av)


def rate_constants(
    r: float, r_av: float, mode: Mode
) -> Tuple[float, float]:
    """Return (s, theta) for residual factors r and r_av.

    PL/KL: s = sqrt((1+r)/(2r)) - 1 so that (1+s)^2 r = (r+1)/2.
    Nonconvex: s = 1/sqrt(r) - 1 so that (1+s)^2 r = 1.
    In both, theta = s(1+s) r / r_av.
    """
    if not 0.0 <= r < 1.0:
        raise ConfigurationError(
            f"residual factor r must be in [0, 1), got {r}"
        )
    if r_av < 0.0:
        raise ConfigurationError(
            f"r_av must be >= 0, got {r_av}"
        )
    if r == 0.0:
        return math.inf, math.inf
    if mode is Mode.NONCONVEX:
        s = 1.0 / math.sqrt(r) - 1.0
    else:
        s = math.sqrt((1.0 + r) / (2.0 * r)) - 1.0
    if r_av == 0.0:
        return s, math.inf
    return s, s * (1.0 + s) * r / r_av


def gamma_max(
    profile: SmoothnessProfile,
    r: float,
    r_av: float,
    s: float,
    mode: Mode,
) -> float:
    """Largest step size the guarantee for *mode* allows.

    PL and nonconvex: 1 / (L + L_tilde sqrt(r_av/r) / s).
    KL: 1 / (2L + L_tilde sqrt(r_av/r) / s).
    """
    if r_av == 0.0 or math.isinf(s):
        penalty = 0.0
    else:
        penalty = profile.L_tilde * math.sqrt(r_av / r) / s
    base = 2.0 * profile.L if mode is Mode.KL else profile.L
    return 1.0 / (base + penalty)


def rate_factor(
    gamma: float, mu: float, r: float, mode: Mode
) -> float:
    """Guaranteed per-round contraction of the Lyapunov function.

    PL: max(1 - gamma*mu, (r+1)/2).
    KL: max(1 / (1 + gamma*mu/2), (r+1)/2).
    """
    if mode is Mode.NONCONVEX:
        raise ConfigurationError(
            "the nonconvex guarantee is sublinear; there is no "
            "rate factor"
        )
    if gamma <= 0.0 or mu <= 0.0:
        raise ConfigurationError(
            f"gamma and mu must be positive, got "
            f"gamma={gamma}, mu={mu}"
        )
    floor = (r + 1.0) / 2.0
    if mode is Mode.PL:
        return max(1.0 - gamma * mu, floor)
    return max(1.0 / (1.0 + 0.5 * gamma * mu), floor)


def validate_algorithm(value: Union[str, Algorithm]) -> Algorithm:
    """Raise ``ConfigurationError`` if *value* is not an algorithm."""
    try:
        return Algorithm(value)
    except ValueError as exc:
        raise ConfigurationError(
            f"algorithm must be one of "
            f"{[a.value for a in Algorithm]}, got {value!r}"
        ) from exc


def validate_mode(value: Union[str, Mode]) -> Mode:
    """Raise ``ConfigurationError`` if *value* is not a mode."""
    try:
        return Mode(value)
    except ValueError as exc:
        raise ConfigurationError(
            f"mode must be one of {[m.value for m in Mode]}, "
            f"got {value!r}"
        ) from exc


def tune(
    params: ClassParams,
    profile: Optional[SmoothnessProfile] = None,
    algorithm: Algorithm = Algorithm.EF_BV,
    mode: Mode = Mode.PL,
    lam: Optional[float] = None,
    nu: Optional[float] = None,
    gamma: Optional[float] = None,
) -> TuneResult:
    """Assemble every derived constant for one configuration.

    EF-BV uses (lambda*, nu*); EF21 uses nu = lambda = lambda* and
    assumes no knowledge of omega_av (r_av computed with omega, so
    r_av = r); DIANA uses lambda*, nu = 1 and r_av = eta^2 +
    omega_av. Explicit *lam* / *nu* override the defaults and the
    constants are recomputed for them.

    Without a *profile* the step size and rate are left as None.
    A *gamma* above the admissible bound is clamped with a
    warning.

    Raises:
        ConfigurationError: if r >= 1 for the chosen lambda, or an
            override contradicts the named algorithm.
    """
    eta = params.eta
    lam = lambda_star(eta, params.omega) if lam is None else lam
    variance = params.omega_av
    if algorithm is Algorithm.EF_BV:
        if nu is None:
            nu = nu_star(eta, params.omega_av)
    elif algorithm is Algorithm.EF21:
        if nu is not None and nu != lam:
            raise ConfigurationError(
                f"EF21 requires nu = lambda, got nu={nu}, "
                f"lambda={lam}"
            )
        nu = lam
        variance = params.omega
    else:
        if nu is not None and nu != 1.0:
            raise ConfigurationError(
                f"DIANA requires nu = 1, got nu={nu}"
            )
        nu = 1.0

    r = residual_factor(lam, eta, params.omega)
    if r >= 1.0:
        raise ConfigurationError(
            f"residual factor r={r:.6g} for lambda={lam} violates "
            f"the hypothesis r < 1 of the convergence guarantees"
        )
    r_av = residual_factor(nu, eta, variance)
    s, theta = rate_constants(r, r_av, mode)

    step: Optional[float] = None
    rate: Optional[float] = None
    if profile is not None:
        bound = gamma_max(profile, r, r_av, s, mode)
        step = bound
        if gamma is not None:
            if gamma <= 0.0:
                raise ConfigurationError(
                    f"gamma must be positive, got {gamma}"
                )
            if gamma > bound:
                logger.warning(
                    f"step size {gamma:.6g} exceeds the admissible "
                    f"bound {bound:.6g}; clamping"
                )
            else:
                step = gamma
        if mode is not Mode.NONCONVEX and profile.mu > 0.0:
            rate = rate_factor(step, profile.mu, r, mode)
    elif gamma is not None:
        step = gamma

    logger.debug(
        f"tuned {algorithm.value}/{mode.value}: lambda={lam:.4g} "
        f"nu={nu:.4g} r={r:.6g} r_av={r_av:.6g} s={s:.4g} "
        f"gamma={step}"
    )
    return TuneResult(
        algorithm=algorithm,
        mode=mode,
        params=params,
        lam=lam,
        nu=nu,
        r=r,
        r_av=r_av,
        s=s,
        theta=theta,
        gamma=step,
        rate=rate,
    )


# -- reports ----------------------------------------------------------

DATASET_SHAPES: Dict[str, int] = {
    "mushrooms": 112,
    "phishing": 68,
    "a9a": 123,
    "w8a": 300,
}
DATASET_WORKERS = 1000


def tuning_row(label: str, result: TuneResult) -> TuningRow:
    """Flatten *result* into one report column."""
    return TuningRow(
        label=label,
        algorithm=result.algorithm.value,
        eta=result.params.eta,
        omega=result.params.omega,
        omega_av=result.params.omega_av,
        lam=result.lam,
        nu=result.nu,
        r=result.r,
        r_av=result.r_av,
        sqrt_ratio=result.sqrt_ratio,
        s=result.s,
        gamma=result.gamma,
    )


def tuning_report(
    params: ClassParams,
    profile: Optional[SmoothnessProfile] = None,
    algorithms: Sequence[Algorithm] = (
        Algorithm.EF_BV,
        Algorithm.EF21,
    ),
    mode: Mode = Mode.PL,
    label: str = "",
) -> List[TuningRow]:
    """One :class:`TuningRow` per algorithm for the same compressor."""
    if profile is None:
        logger.info(
            "No smoothness constants given; the gamma row is omitted"
        )
    return [
        tuning_row(label, tune(params, profile, alg, mode))
        for alg in algorithms
    ]


def shapes_report(
    profiles: Optional[Dict[str, SmoothnessProfile]] = None,
    mode: Mode = Mode.PL,
) -> List[TuningRow]:
    """EF-BV and EF21 constants for comp-(k, d/2), k in {1, 2}.

    Covers the four LibSVM dataset shapes at n = 1000 workers.
    *profiles* maps a dataset name to its smoothness constants;
    datasets without one get no gamma.
    """
    profiles = profiles or {}
    rows: List[TuningRow] = []
    for name, d in DATASET_SHAPES.items():
        for k in (1, 2):
            spec = CompressorSpec.comp(d, k, d // 2)
            params = theoretical_params(spec, DATASET_WORKERS)
            rows.extend(
                tuning_report(
                    params,
                    profiles.get(name),
                    mode=mode,
                    label=f"{name} {spec.label}",
                )
            )
    return rows

"""Experiment manifests and environment defaults.

A manifest is one JSON document. Its keys are the experiment keys
below plus the :class:`~efbv.engine.RunConfig` field names; any
other key, at any nesting level, is rejected. Example::

    {
      "synthetic": {"d": 20, "N": 200, "separation": 0.5},
      "workers": 10,
      "l2": 0.1,
      "compressor": {"family": "comp", "k": 2, "k_prime": 10},
      "mode": "pl",
      "rounds": 2000,
      "algorithms": ["ef_bv", "ef21"],
      "seeds": [0, 1, 2]
    }
"""

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from loguru import logger

from .compressors import CompressorSpec
from .engine import RunConfig
from .errors import ConfigurationError
from .problems import (
    Dataset,
    LogisticProblem,
    Regularizer,
    build_problem,
    synth_dataset,
)
from .tuning import validate_algorithm, validate_mode
from .types import (
    DEFAULT_BITS_PER_COORDINATE,
    Algorithm,
    Dependence,
    Family,
    HInit,
    RegularizerKind,
)

DEFAULT_OUTPUT_DIR = "./efbv_runs"
DEFAULT_LOG_LEVEL = "INFO"

EXPERIMENT_KEYS = frozenset(
    {
        "dataset",
        "dim",
        "synthetic",
        "normalize_rows",
        "workers",
        "overlap",
        "l2",
        "nonconvex_weight",
        "regularizer",
        "algorithms",
        "seeds",
        "root_sum_L",
        "appendix_L",
        "partition_seed",
        "target",
    }
)
RUN_KEYS = frozenset(
    {
        "compressor",
        "dependence",
        "mode",
        "rounds",
        "lam",
        "nu",
        "gamma",
        "h_init",
        "x0",
        "cadence",
        "bits_per_coordinate",
    }
)


# -- environment ----------------------------------------------------


def default_output_dir() -> Path:
    """``EFBV_OUTPUT_DIR`` or ``./efbv_runs``."""
    return Path(os.getenv("EFBV_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR)


def default_log_level() -> str:
    return (os.getenv("EFBV_LOG_LEVEL") or DEFAULT_LOG_LEVEL).upper()


def default_bits_per_coordinate() -> int:
    raw = os.getenv("EFBV_BITS_PER_COORD")
    if not raw:
        return DEFAULT_BITS_PER_COORDINATE
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigurationError(
            f"EFBV_BITS_PER_COORD must be an int, got {raw!r}"
        ) from exc
    if value < 1:
        raise ConfigurationError(
            f"EFBV_BITS_PER_COORD must be >= 1, got {value}"
        )
    return value


# -- small parsers --------------------------------------------------


def parse_synthetic(text: str) -> Tuple[int, int, float]:
    """Parse ``"d,N,sep"``."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigurationError(
            f"synthetic spec must be 'd,N,sep', got {text!r}"
        )
    try:
        return int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError as exc:
        raise ConfigurationError(
            f"synthetic spec must be 'd,N,sep', got {text!r}"
        ) from exc


def parse_seeds(text: str) -> Tuple[int, ...]:
    """Parse ``"a,b,c"`` into nonnegative seeds."""
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigurationError(
            f"seeds must be comma-separated ints, got {text!r}"
        ) from exc
    if not seeds or min(seeds) < 0:
        raise ConfigurationError(
            f"seeds must be a nonempty list of ints >= 0, "
            f"got {text!r}"
        )
    return seeds


def _reject_unknown(
    data: Dict[str, Any], allowed: frozenset, where: str
) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown keys in {where}: {sorted(unknown)}"
        )


def _enum(cls, value: Any, key: str):
    try:
        return cls(value)
    except ValueError as exc:
        raise ConfigurationError(
            f"{key} must be one of {[m.value for m in cls]}, "
            f"got {value!r}"
        ) from exc


# -- manifest -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of :func:`~efbv.problems.synth_dataset`."""

    d: int
    N: int
    separation: float = 1.0
    seed: int = 0

    @classmethod
    def from_value(
        cls, value: Union[str, Dict[str, Any]]
    ) -> "SyntheticSpec":
        if isinstance(value, str):
            return cls(*parse_synthetic(value))
        if not isinstance(value, dict):
            raise ConfigurationError(
                f"synthetic must be 'd,N,sep' or an object, "
                f"got {value!r}"
            )
        _reject_unknown(
            value,
            frozenset({"d", "N", "separation", "seed"}),
            "synthetic",
        )
        try:
            return cls(
                d=int(value["d"]),
                N=int(value["N"]),
                separation=float(value.get("separation", 1.0)),
                seed=int(value.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigurationError(
                f"synthetic needs key {exc.args[0]!r}"
            ) from exc


@dataclass(frozen=True)
class ExperimentManifest:
    """
    Everything ``efbv run`` needs to reproduce an experiment.

    Attributes:
        dataset (Optional[str]): LibSVM file path.
        synthetic (Optional[SyntheticSpec]): Generated data.
        workers (int): Number of workers n.
        overlap (int): Data overlap xi in {1, 2}.
        l2 (float): Strong-convexity term folded into each f_i.
        nonconvex_weight (float): Weight of the nonconvex penalty.
        regularizer (Regularizer): Nonsmooth term R.
        algorithms (Tuple[Algorithm, ...]): Run side by side.
        seeds (Tuple[int, ...]): Master seeds.
        run (Dict[str, Any]): RunConfig fields shared by all runs.
    """

    workers: int
    dataset: Optional[str] = None
    dim: Optional[int] = None
    synthetic: Optional[SyntheticSpec] = None
    normalize_rows: bool = False
    overlap: int = 1
    l2: float = 0.0
    nonconvex_weight: float = 0.0
    regularizer: Regularizer = field(default_factory=Regularizer)
    algorithms: Tuple[Algorithm, ...] = (
        Algorithm.EF_BV,
        Algorithm.EF21,
    )
    seeds: Tuple[int, ...] = (0,)
    root_sum_L: bool = False
    partition_seed: int = 0
    target: float = 1e-6
    run: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigurationError(
                "exactly one of dataset and synthetic must be given"
            )
        if self.workers < 1:
            raise ConfigurationError(
                f"workers must be >= 1, got {self.workers}"
            )
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if not self.algorithms:
            raise ConfigurationError("algorithms must be nonempty")
        if self.target <= 0.0:
            raise ConfigurationError(
                f"target must be positive, got {self.target}"
            )

    def with_overrides(self, **changes: Any) -> "ExperimentManifest":
        """Copy with CLI flags applied (None values ignored)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if "dataset" in changes:
            changes.setdefault("synthetic", None)
        elif "synthetic" in changes:
            changes.setdefault("dataset", None)
        return replace(self, **changes)

    def load_dataset(self) -> Dataset:
        if self.synthetic is not None:
            s = self.synthetic
            data = synth_dataset(s.seed, s.d, s.N, s.separation)
        else:
            assert self.dataset is not None
            data = Dataset.load(self.dataset, self.dim)
        return data.normalize_rows() if self.normalize_rows else data

    def build_problem(
        self, dataset: Optional[Dataset] = None
    ) -> LogisticProblem:
        return build_problem(
            dataset if dataset is not None else self.load_dataset(),
            self.workers,
            overlap=self.overlap,
            seed=self.partition_seed,
            l2=self.l2,
            nonconvex_weight=self.nonconvex_weight,
            regularizer=self.regularizer,
        )

    def run_config(
        self, algorithm: Algorithm, seed: int, d: int, **extra: Any
    ) -> RunConfig:
        """RunConfig of one (algorithm, seed) run."""
        fields = dict(self.run)
        fields.update({k: v for k, v in extra.items() if v is not None})
        spec = fields.pop("compressor", None)
        if spec is None:
            raise ConfigurationError("the manifest needs a compressor")
        if not isinstance(spec, CompressorSpec):
            if spec.get("family") == Family.NICE_SAMPLING.value:
                spec = {"n": self.workers, **spec}
            spec = CompressorSpec.from_dict(spec, d)
        if "x0" in fields and fields["x0"] is not None:
            fields["x0"] = tuple(float(v) for v in fields["x0"])
        return RunConfig(
            compressor=spec,
            algorithm=algorithm,
            seed=seed,
            root_sum_L=self.root_sum_L,
            **fields,
        )


def _parse_regularizer(value: Any) -> Regularizer:
    if value is None:
        return Regularizer()
    if not isinstance(value, dict):
        raise ConfigurationError(
            f"regularizer must be an object, got {value!r}"
        )
    _reject_unknown(
        value, frozenset({"kind", "weight"}), "regularizer"
    )
    return Regularizer(
        kind=_enum(RegularizerKind, value.get("kind", "none"), "kind"),
        weight=float(value.get("weight", 0.0)),
    )


def _parse_run_fields(data: Dict[str, Any]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key in RUN_KEYS & set(data):
        out[key] = data[key]
    if "dependence" in out:
        out["dependence"] = _enum(
            Dependence, out["dependence"], "dependence"
        )
    if "mode" in out:
        out["mode"] = validate_mode(out["mode"])
    if "h_init" in out:
        out["h_init"] = _enum(HInit, out["h_init"], "h_init")
    for key in ("rounds", "cadence", "bits_per_coordinate"):
        if key in out:
            out[key] = int(out[key])
    if "compressor" in out and not isinstance(
        out["compressor"], dict
    ):
        raise ConfigurationError(
            "compressor must be an object like "
            '{"family": "comp", "k": 1, "k_prime": 56}'
        )
    return out


def parse_manifest(data: Dict[str, Any]) -> ExperimentManifest:
    """Validate a decoded manifest document.

    Raises:
        ConfigurationError: on unknown keys or invalid values.
    """
    if not isinstance(data, dict):
        raise ConfigurationError("the manifest must be a JSON object")
    _reject_unknown(data, EXPERIMENT_KEYS | RUN_KEYS, "manifest")
    if "workers" not in data:
        raise ConfigurationError("the manifest needs 'workers'")
    synthetic = data.get("synthetic")
    seeds = data.get("seeds", [0])
    if isinstance(seeds, str):
        seeds = parse_seeds(seeds)
    algorithms = data.get("algorithms", ["ef_bv", "ef21"])
    return ExperimentManifest(
        workers=int(data["workers"]),
        dataset=data.get("dataset"),
        dim=data.get("dim"),
        synthetic=(
            None
            if synthetic is None
            else SyntheticSpec.from_value(synthetic)
        ),
        normalize_rows=bool(data.get("normalize_rows", False)),
        overlap=int(data.get("overlap", 1)),
        l2=float(data.get("l2", 0.0)),
        nonconvex_weight=float(data.get("nonconvex_weight", 0.0)),
        regularizer=_parse_regularizer(data.get("regularizer")),
        algorithms=tuple(validate_algorithm(a) for a in algorithms),
        seeds=tuple(int(s) for s in seeds),
        root_sum_L=bool(
            data.get("root_sum_L", data.get("appendix_L", False))
        ),
        partition_seed=int(data.get("partition_seed", 0)),
        target=float(data.get("target", 1e-6)),
        run=_parse_run_fields(data),
    )


def load_manifest(path: Union[str, Path]) -> ExperimentManifest:
    """Read and validate a JSON manifest file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path} is not valid JSON: {exc}"
        ) from exc
    except OSError as exc:
        raise ConfigurationError(
            f"cannot read manifest {path}: {exc}"
        ) from exc
    manifest = parse_manifest(data)
    logger.debug(
        f"Loaded manifest {path}: workers={manifest.workers}, "
        f"algorithms={[a.value for a in manifest.algorithms]}, "
        f"seeds={list(manifest.seeds)}"
    )
    return manifest

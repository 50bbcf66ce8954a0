"""LibSVM text format reader and writer.

Lines look like ``label idx:val idx:val ...`` with 1-based,
strictly increasing feature indices. Labels may be encoded as
{-1, +1} or {0, 1}; both are mapped to {-1, +1}. Blank lines and
``#`` comments are skipped.
"""

from typing import IO, Iterable, List, Optional, Tuple

import numpy as np
from loguru import logger

from .errors import LibSVMParseError

_LABEL_MAP = {
    -1.0: -1.0,
    1.0: 1.0,
    0.0: -1.0,
}


def _parse_label(token: str, line_number: int) -> float:
    try:
        raw = float(token)
    except ValueError as exc:
        raise LibSVMParseError(
            line_number, f"label {token!r} is not a number"
        ) from exc
    if raw not in _LABEL_MAP:
        raise LibSVMParseError(
            line_number,
            f"label {token!r} is not in {{-1, +1}} or {{0, 1}}",
        )
    return _LABEL_MAP[raw]


def _parse_features(
    tokens: Iterable[str], line_number: int
) -> List[Tuple[int, float]]:
    pairs: List[Tuple[int, float]] = []
    last = 0
    for token in tokens:
        idx_text, sep, val_text = token.partition(":")
        if not sep:
            raise LibSVMParseError(
                line_number, f"token {token!r} is not idx:val"
            )
        try:
            idx = int(idx_text)
            val = float(val_text)
        except ValueError as exc:
            raise LibSVMParseError(
                line_number, f"malformed token {token!r}"
            ) from exc
        if idx < 1:
            raise LibSVMParseError(
                line_number,
                f"index {idx} is out of range (indices are 1-based)",
            )
        if idx <= last:
            raise LibSVMParseError(
                line_number,
                f"index {idx} is not strictly increasing "
                f"(previous {last})",
            )
        if not np.isfinite(val):
            raise LibSVMParseError(
                line_number, f"value in {token!r} is not finite"
            )
        pairs.append((idx, val))
        last = idx
    return pairs


def parse_libsvm(
    stream: IO[str], dim: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Read a LibSVM text stream into dense arrays.

    Args:
        stream: Text stream (open file, ``io.StringIO`` ...).
        dim: Explicit feature dimension; defaults to the largest
            index observed.

    Returns:
        ``(features, labels)``: an N x d float64 matrix and a
        length-N vector with entries in {-1, +1}.

    Raises:
        LibSVMParseError: on malformed tokens, non-increasing
            indices, unknown labels, indices beyond *dim*, or an
            empty stream.
    """
    labels: List[float] = []
    rows: List[List[Tuple[int, float]]] = []
    max_index = 0
    for line_number, line in enumerate(stream, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        labels.append(_parse_label(tokens[0], line_number))
        pairs = _parse_features(tokens[1:], line_number)
        if pairs:
            top = pairs[-1][0]
            if dim is not None and top > dim:
                raise LibSVMParseError(
                    line_number,
                    f"index {top} exceeds dimension {dim}",
                )
            max_index = max(max_index, top)
        rows.append(pairs)

    if not rows:
        raise LibSVMParseError(0, "no data rows found")
    d = dim if dim is not None else max_index
    if d < 1:
        raise LibSVMParseError(
            0, "cannot infer a positive dimension; pass dim"
        )
    features = np.zeros((len(rows), d), dtype=np.float64)
    for j, pairs in enumerate(rows):
        for idx, val in pairs:
            features[j, idx - 1] = val
    logger.debug(
        f"Parsed LibSVM data: N={len(rows)}, d={d}, "
        f"{int(sum(v > 0 for v in labels))} positive"
    )
    return features, np.asarray(labels, dtype=np.float64)


def write_libsvm(
    stream: IO[str], features: np.ndarray, labels: np.ndarray
) -> None:
    """Write dense arrays as LibSVM text with 17 significant digits.

    Zero features are omitted; labels are written as -1 / +1.
    """
    for row, label in zip(features, labels):
        parts = ["+1" if label > 0 else "-1"]
        for idx in np.flatnonzero(row):
            parts.append(f"{idx + 1}:{row[idx]:.17g}")
        stream.write(" ".join(parts) + "\n")

"""Softmax model container and the SGM file format.

An SGM file is one JSON header line followed by ``V*d`` little-endian float64
values in row-major order::

    {"version":1,"V":3,"d":2,"labels":["a","b","c"]}\\n<48 bytes>

When the header carries ``"inline": true`` the matrix is given in the header
itself under ``"gamma"`` as nested arrays and no binary payload follows.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateLabels,
    KOutOfRange,
    MalformedHeader,
    NonFiniteEntries,
    PayloadTruncated,
    VocabularyTooSmall,
)

SGM_VERSION = 1
_DTYPE = np.dtype("<f8")


@dataclass(frozen=True, eq=False)
class SoftmaxModel:
    """Item labels plus the ``V x d`` unembedding matrix of a softmax family.

    The matrix is copied on construction and marked read-only, so a model can
    be shared freely between workers.
    """

    labels: tuple[str, ...]
    gamma: np.ndarray

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        gamma = np.array(self.gamma, dtype=np.float64, order="C")
        if gamma.ndim != 2:
            raise DimensionMismatch(f"gamma must be 2-D, got shape {gamma.shape}")
        V, d = gamma.shape
        if V < 2:
            raise VocabularyTooSmall(f"need at least 2 items, got {V}")
        if d < 1:
            raise DimensionMismatch("embedding dimension must be >= 1")
        if len(labels) != V:
            raise DimensionMismatch(f"{len(labels)} labels for {V} rows")
        if len(set(labels)) != V:
            raise DuplicateLabels("item labels must be unique")
        if not np.all(np.isfinite(gamma)):
            raise NonFiniteEntries("gamma contains NaN or inf")
        gamma.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "gamma", gamma)

    @property
    def V(self) -> int:
        return self.gamma.shape[0]

    @property
    def d(self) -> int:
        return self.gamma.shape[1]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def scaled(self, factor: float) -> "SoftmaxModel":
        """Return a copy with every unembedding vector multiplied by ``factor``.

        Used to re-apply a contrastive temperature to embeddings that were
        exported without it.
        """
        return SoftmaxModel(self.labels, self.gamma * float(factor))

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise DimensionMismatch(f"expected a {self.d}-vector, got shape {x.shape}")
        return x

    def __eq__(self, other):
        if not isinstance(other, SoftmaxModel):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.gamma, other.gamma)

    __hash__ = None


def _parse_header(line: bytes) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    for key in ("V", "d", "labels"):
        if key not in header:
            raise MalformedHeader(f"header missing {key!r}")
    if header.get("version", SGM_VERSION) != SGM_VERSION:
        raise MalformedHeader(f"unsupported SGM version {header.get('version')!r}")
    V, d = header["V"], header["d"]
    if not (isinstance(V, int) and isinstance(d, int)) or isinstance(V, bool):
        raise MalformedHeader("V and d must be integers")
    if V < 2:
        raise VocabularyTooSmall(f"header declares V={V}")
    if d < 1:
        raise MalformedHeader(f"header declares d={d}")
    if not isinstance(header["labels"], list) or len(header["labels"]) != V:
        raise MalformedHeader("labels must be a list of length V")
    return header


def load_model(path) -> SoftmaxModel:
    """Read and validate an SGM file (binary or inline-JSON variant)."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    head, payload = (raw, b"") if nl < 0 else (raw[:nl], raw[nl + 1 :])
    header = _parse_header(head)
    V, d = header["V"], header["d"]

    if header.get("inline"):
        try:
            gamma = np.array(header["gamma"], dtype=np.float64)
        except (KeyError, TypeError, ValueError):
            raise MalformedHeader("inline model needs a numeric 'gamma' array") from None
        if gamma.shape != (V, d):
            raise DimensionMismatch(f"inline gamma has shape {gamma.shape}, header says ({V}, {d})")
    else:
        need = V * d * _DTYPE.itemsize
        if len(payload) < need:
            raise PayloadTruncated(
                f"payload holds {len(payload) // _DTYPE.itemsize} floats, header declares {V * d}"
            )
        if len(payload) > need:
            raise DimensionMismatch(f"{len(payload) - need} trailing bytes after payload")
        gamma = np.frombuffer(payload, dtype=_DTYPE).reshape(V, d).astype(np.float64)
    return SoftmaxModel(tuple(header["labels"]), gamma)


def save_model(model: SoftmaxModel, path, inline: bool = False) -> None:
    """Write ``model`` atomically; on failure no partial file is left behind."""
    path = Path(path)
    header = {"version": SGM_VERSION, "V": model.V, "d": model.d, "labels": list(model.labels)}
    if inline:
        header["inline"] = True
        header["gamma"] = model.gamma.tolist()
    blob = json.dumps(header, ensure_ascii=False, separators=(",", ":")).encode("utf-8") + b"\n"
    if not inline:
        blob += np.ascontiguousarray(model.gamma, dtype=_DTYPE).tobytes()

    fd, tmp = tempfile.mkstemp(prefix=".sgm-", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def top_k_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties to the lower index, sorted ascending."""
    order = np.argsort(-probs, kind="stable")
    return np.sort(order[:k])


def restrict_top_k(model: SoftmaxModel, lam, k: int) -> tuple[SoftmaxModel, np.ndarray]:
    """Sub-model over the ``k`` most probable items under ``lam``.

    Returns the sub-model and the array mapping its rows back to original
    indices. Kept rows keep their relative order.
    """
    from .geometry import softmax_probs

    if not 2 <= k <= model.V:
        raise KOutOfRange(f"k must be in [2, {model.V}], got {k}")
    keep = top_k_indices(softmax_probs(model, lam), k)
    sub = SoftmaxModel(tuple(model.labels[i] for i in keep), model.gamma[keep])
    return sub, keep


def make_model(gamma, labels: Sequence[str] | None = None) -> SoftmaxModel:
    """Convenience constructor; labels default to ``y0, y1, ...``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if labels is None:
        labels = [f"y{i}" for i in range(gamma.shape[0])]
    return SoftmaxModel(tuple(labels), gamma)

"""Binary feature/label files and a synthetic identity-cluster generator.

Feature file (``FCTF``): magic, u32 version, u64 N, u32 D, then N*D float32.
Label file (``FCTL``): magic, u32 version, u64 N, then N int64 (-1 = unlabeled).
All fields little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import FeatureStore
from .numcore.checkpoint import FormatError

FEATURE_MAGIC = b"FCTF"
LABEL_MAGIC = b"FCTL"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    identities: int = 50
    min_samples: int = 16
    max_samples: int = 24
    dim: int = 32
    sigma_clean: float = 0.1
    hard_fraction: float = 0.2
    sigma_hard: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.identities < 2:
            raise ValueError("need at least 2 identities")
        if not 1 <= self.min_samples <= self.max_samples:
            raise ValueError("need 1 <= min_samples <= max_samples")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1]")
        if not 0.0 < self.sigma_clean <= self.sigma_hard:
            raise ValueError("need 0 < sigma_clean <= sigma_hard")

    @classmethod
    def from_file(cls, path) -> "SyntheticSpec":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def generate(spec: SyntheticSpec) -> FeatureStore:
    """Identity means on the unit sphere plus per-sample isotropic noise.

    Each sample is hard with probability ``hard_fraction`` and then receives
    ``sigma_hard`` noise instead of ``sigma_clean``. Rows are renormalized.
    """
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.identities, spec.dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    counts = rng.integers(spec.min_samples, spec.max_samples + 1, size=spec.identities)
    labels = np.repeat(np.arange(spec.identities, dtype=np.int64), counts)
    n = labels.size
    hard = rng.random(n) < spec.hard_fraction
    sigma = np.where(hard, spec.sigma_hard, spec.sigma_clean)[:, None]
    feats = means[labels] + sigma * rng.standard_normal((n, spec.dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    return FeatureStore(feats.astype(np.float32), labels)


def save_features(store: FeatureStore, path, label_path=None) -> None:
    head = FEATURE_MAGIC + struct.pack("<IQI", FORMAT_VERSION, store.n, store.d)
    Path(path).write_bytes(head + store.features.astype("<f4").tobytes())
    if label_path is not None:
        if store.labels is None:
            raise ValueError("store has no labels to save")
        save_labels(store.labels, label_path)


def save_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels, dtype="<i8")
    Path(path).write_bytes(LABEL_MAGIC + struct.pack("<IQ", FORMAT_VERSION, labels.size) + labels.tobytes())


def _read_header(path, magic: bytes, fmt: str) -> tuple[bytes, tuple]:
    path = Path(path)
    size = struct.calcsize("<" + fmt) + 4
    with path.open("rb") as fh:
        head = fh.read(size)
    if len(head) < 4 or head[:4] != magic:
        raise FormatError(f"{path}: bad magic {head[:4]!r} at byte 0, expected {magic!r}")
    if len(head) < size:
        raise FormatError(f"{path}: truncated header at byte {len(head)}, expected {size} bytes")
    fields = struct.unpack_from("<" + fmt, head, 4)
    if fields[0] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {fields[0]} at byte 4")
    return head, fields


def _read_payload(path, offset: int, nbytes: int) -> bytes:
    path = Path(path)
    actual = path.stat().st_size - offset
    if actual != nbytes:
        raise FormatError(f"{path}: payload at byte {offset} should be {nbytes} bytes, found {actual}")
    with path.open("rb") as fh:
        fh.seek(offset)
        return fh.read()


def load_labels(path) -> np.ndarray:
    _, (_, n) = _read_header(path, LABEL_MAGIC, "IQ")
    if n > (1 << 40):
        raise FormatError(f"{path}: implausible instance count {n} at byte 8")
    raw = _read_payload(path, 16, n * 8)
    return np.frombuffer(raw, "<i8").astype(np.int64)


def load_features(path, label_path=None) -> FeatureStore:
    _, (_, n, d) = _read_header(path, FEATURE_MAGIC, "IQI")
    if d == 0 or n > (1 << 62) // (4 * d):
        raise FormatError(f"{path}: N*D overflows (N={n}, D={d}) at byte 8")
    raw = _read_payload(path, 20, n * d * 4)
    feats = np.frombuffer(raw, "<f4").reshape(n, d).astype(np.float32)
    labels = None
    if label_path is not None:
        labels = load_labels(label_path)
        if labels.size != n:
            raise FormatError(f"{label_path}: {labels.size} labels for {n} features")
    return FeatureStore(feats, labels)

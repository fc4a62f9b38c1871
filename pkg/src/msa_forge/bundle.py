"""Feature bundles: the on-disk dataset container and its in-memory views.

A bundle is a directory holding ``manifest.json`` plus one ``<modality>.bin``
per modality. The manifest carries dataset name, label range, the modality
table, and per-sample metadata (labels, split, tags, per-modality lengths).
Each ``.bin`` starts with a header (magic ``MSAB``, version, then N, T, d
as little-endian u32) followed by the N x T x d float32 array, row-major,
little-endian. Positions past a sample's length are exactly zero.

Bundles are immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleFormatError, BundleValidationError, EmptySplitError

__all__ = [
    "MODALITIES",
    "SPLITS",
    "INSTANCE_TYPES",
    "SCENARIOS",
    "SampleMeta",
    "Manifest",
    "ModalityBlock",
    "FeatureBundle",
    "write_bundle",
    "read_bundle",
    "pad_and_mask",
    "split_view",
    "take_view",
    "bundle_equal",
]

MODALITIES = ("text", "audio", "vision")
SPLITS = ("train", "valid", "test")
INSTANCE_TYPES = ("easy", "common", "difficult", "noise", "missing")
SCENARIOS = ("Films(TV)", "Variety Show", "Life(Vlog)")

_MAGIC = b"MSAB"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, N, T, d


@dataclass
class SampleMeta:
    """Per-sample metadata: id, split, labels, and optional tags."""

    id: str
    split: str
    label_m: float
    label_t: float | None = None
    label_a: float | None = None
    label_v: float | None = None
    scenario: str | None = None
    instance_type: str | None = None

    def unimodal_label(self, modality: str) -> float | None:
        return {"text": self.label_t, "audio": self.label_a, "vision": self.label_v}[modality]


@dataclass
class Manifest:
    dataset_name: str
    label_range: tuple[float, float]
    samples: list[SampleMeta] = field(default_factory=list)


@dataclass(eq=False)
class ModalityBlock:
    """One modality's padded sequences: (N, max_len, feature_dim) float32
    plus per-sample true lengths."""

    feature_dim: int
    max_len: int
    data: np.ndarray
    lengths: np.ndarray

    def mask(self) -> np.ndarray:
        """Boolean (N, max_len) validity mask derived from lengths."""
        return np.arange(self.max_len)[None, :] < self.lengths[:, None]


@dataclass(eq=False)
class FeatureBundle:
    manifest: Manifest
    blocks: dict[str, ModalityBlock]

    @property
    def n(self) -> int:
        return len(self.manifest.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.manifest.samples]

    def labels(self) -> np.ndarray:
        return np.array([s.label_m for s in self.manifest.samples], dtype=np.float64)

    def has_unimodal_labels(self) -> bool:
        """True when every sample carries a label for every present modality."""
        if not self.manifest.samples:
            return False
        for s in self.manifest.samples:
            for m in self.blocks:
                if s.unimodal_label(m) is None:
                    return False
        return True

    def validate(self) -> None:
        validate_bundle(self)


def validate_bundle(bundle: FeatureBundle) -> None:
    """Check every container invariant; raise BundleValidationError naming
    the first offending sample/field."""
    man = bundle.manifest
    lo, hi = man.label_range
    if not lo < hi:
        raise BundleValidationError(f"label_range ({lo}, {hi}) must satisfy lo < hi")
    if not bundle.blocks:
        raise BundleValidationError("bundle has no modality blocks")
    for name in bundle.blocks:
        if name not in MODALITIES:
            raise BundleValidationError(
                f"unknown modality {name!r}; expected a subset of {MODALITIES}")
    n = len(man.samples)
    seen: set[str] = set()
    for s in man.samples:
        if s.id in seen:
            raise BundleValidationError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        if s.split not in SPLITS:
            raise BundleValidationError(f"sample {s.id!r}: bad split {s.split!r}")
        if not lo <= s.label_m <= hi:
            raise BundleValidationError(
                f"sample {s.id!r}: label_m {s.label_m} outside label_range ({lo}, {hi})")
        for mod in bundle.blocks:
            uni = s.unimodal_label(mod)
            if uni is not None and not lo <= uni <= hi:
                raise BundleValidationError(
                    f"sample {s.id!r}: label_{mod[0]} {uni} outside label_range ({lo}, {hi})")
        if s.instance_type is not None and s.instance_type not in INSTANCE_TYPES:
            raise BundleValidationError(
                f"sample {s.id!r}: instance_type {s.instance_type!r} not in {INSTANCE_TYPES}")
        if s.scenario is not None and s.scenario not in SCENARIOS:
            raise BundleValidationError(
                f"sample {s.id!r}: scenario {s.scenario!r} not in {SCENARIOS}")
    for name, block in bundle.blocks.items():
        if block.feature_dim <= 0 or block.max_len <= 0:
            raise BundleValidationError(f"modality {name!r}: non-positive dims")
        expect = (n, block.max_len, block.feature_dim)
        if block.data.shape != expect:
            raise BundleValidationError(
                f"modality {name!r}: data shape {block.data.shape} != {expect}")
        if block.data.dtype != np.float32:
            raise BundleValidationError(
                f"modality {name!r}: dtype {block.data.dtype}, expected float32")
        if block.lengths.shape != (n,):
            raise BundleValidationError(
                f"modality {name!r}: lengths shape {block.lengths.shape} != ({n},)")
        bad = ~np.isfinite(block.data)
        if bad.any():
            i, t, d = map(int, np.argwhere(bad)[0])
            sid = man.samples[i].id if i < n else str(i)
            raise BundleValidationError(
                f"non-finite value at sample {sid!r}, modality {name!r}, frame {t}, dim {d}")
        for i, length in enumerate(block.lengths):
            if not 1 <= length <= block.max_len:
                raise BundleValidationError(
                    f"sample {man.samples[i].id!r}, modality {name!r}: "
                    f"length {int(length)} outside [1, {block.max_len}]")
            tail = block.data[i, int(length):]
            if tail.size and np.any(tail != 0):
                raise BundleValidationError(
                    f"sample {man.samples[i].id!r}, modality {name!r}: "
                    f"nonzero padding past length {int(length)}")


def _manifest_to_json(bundle: FeatureBundle) -> dict:
    man = bundle.manifest
    samples = []
    for i, s in enumerate(man.samples):
        entry: dict = {"id": s.id, "split": s.split, "label_m": float(s.label_m)}
        for key, val in (("label_t", s.label_t), ("label_a", s.label_a),
                         ("label_v", s.label_v)):
            if val is not None:
                entry[key] = float(val)
        for key, val in (("scenario", s.scenario), ("instance_type", s.instance_type)):
            if val is not None:
                entry[key] = val
        entry["lengths"] = {m: int(b.lengths[i]) for m, b in bundle.blocks.items()}
        samples.append(entry)
    return {
        "dataset_name": man.dataset_name,
        "label_range": [man.label_range[0], man.label_range[1]],
        "modalities": [
            {"name": m, "feature_dim": b.feature_dim, "max_len": b.max_len}
            for m, b in bundle.blocks.items()
        ],
        "samples": samples,
    }


def write_bundle(bundle: FeatureBundle, path) -> None:
    """Validate and persist a bundle as a directory; read_bundle(path)
    reproduces it bit-exactly."""
    validate_bundle(bundle)
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleFormatError(f"cannot create bundle directory {root}: {exc}") from exc
    (root / "manifest.json").write_text(
        json.dumps(_manifest_to_json(bundle), indent=2) + "\n", encoding="utf-8")
    for name, block in bundle.blocks.items():
        with open(root / f"{name}.bin", "wb") as fh:
            n, t, d = block.data.shape
            fh.write(_HEADER.pack(_MAGIC, _VERSION, n, t, d))
            fh.write(np.ascontiguousarray(block.data, dtype="<f4").tobytes())


def _read_block(path: Path) -> tuple[np.ndarray, tuple[int, int, int]]:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise BundleFormatError(f"{path.name}: truncated header")
    magic, version, n, t, d = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise BundleFormatError(f"{path.name}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise BundleFormatError(f"{path.name}: unsupported version {version}")
    expect = _HEADER.size + 4 * n * t * d
    if len(raw) != expect:
        raise BundleFormatError(
            f"{path.name}: payload is {len(raw) - _HEADER.size} bytes, "
            f"header promises {4 * n * t * d}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, t, d)
    return np.ascontiguousarray(data), (n, t, d)


def read_bundle(path) -> FeatureBundle:
    """Load and validate a bundle directory written by write_bundle."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise BundleFormatError(f"no manifest.json under {root}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"manifest.json is not valid JSON: {exc}") from exc
    try:
        lo, hi = doc["label_range"]
        samples = [
            SampleMeta(
                id=entry["id"],
                split=entry["split"],
                label_m=float(entry["label_m"]),
                label_t=entry.get("label_t"),
                label_a=entry.get("label_a"),
                label_v=entry.get("label_v"),
                scenario=entry.get("scenario"),
                instance_type=entry.get("instance_type"),
            )
            for entry in doc["samples"]
        ]
        modality_table = doc["modalities"]
        dataset_name = doc["dataset_name"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleFormatError(f"manifest.json is malformed: {exc!r}") from exc

    n = len(samples)
    blocks: dict[str, ModalityBlock] = {}
    for row in modality_table:
        name = row["name"]
        bin_path = root / f"{name}.bin"
        if not bin_path.exists():
            raise BundleFormatError(f"manifest lists modality {name!r} but {name}.bin is missing")
        data, (bn, bt, bd) = _read_block(bin_path)
        if (bn, bt, bd) != (n, row["max_len"], row["feature_dim"]):
            raise BundleFormatError(
                f"modality {name!r}: array shape {(bn, bt, bd)} disagrees with manifest "
                f"({n}, {row['max_len']}, {row['feature_dim']})")
        try:
            lengths = np.array([entry["lengths"][name] for entry in doc["samples"]],
                               dtype=np.int64)
        except KeyError as exc:
            raise BundleFormatError(f"sample is missing a length for modality {name!r}") from exc
        blocks[name] = ModalityBlock(feature_dim=bd, max_len=bt, data=data, lengths=lengths)

    bundle = FeatureBundle(
        manifest=Manifest(dataset_name=dataset_name, label_range=(float(lo), float(hi)),
                          samples=samples),
        blocks=blocks,
    )
    validate_bundle(bundle)
    return bundle


def pad_and_mask(block: ModalityBlock, target_len: int,
                 truncate: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Re-pad a block to ``target_len`` and return (data, mask).

    mask[i, t] is true iff t < length_i; data under a false mask is zero.
    Shortening below an existing length requires ``truncate=True``.
    """
    if target_len < 1:
        raise BundleValidationError(f"target_len must be >= 1, got {target_len}")
    longest = int(block.lengths.max())
    if target_len < longest and not truncate:
        raise BundleValidationError(
            f"target_len {target_len} < longest sequence {longest}; pass truncate=True")
    n = block.data.shape[0]
    lengths = np.minimum(block.lengths, target_len)
    out = np.zeros((n, target_len, block.feature_dim), dtype=np.float32)
    keep = min(target_len, block.max_len)
    out[:, :keep, :] = block.data[:, :keep, :]
    mask = np.arange(target_len)[None, :] < lengths[:, None]
    out[~mask] = 0.0
    return out, mask


def take_view(bundle: FeatureBundle, indices) -> FeatureBundle:
    """Sub-bundle with the given sample indices, order preserved."""
    indices = np.asarray(indices, dtype=np.int64)
    samples = [bundle.manifest.samples[i] for i in indices]
    blocks = {
        name: ModalityBlock(
            feature_dim=b.feature_dim,
            max_len=b.max_len,
            data=b.data[indices].copy(),
            lengths=b.lengths[indices].copy(),
        )
        for name, b in bundle.blocks.items()
    }
    return FeatureBundle(
        manifest=Manifest(bundle.manifest.dataset_name, bundle.manifest.label_range,
                          list(samples)),
        blocks=blocks,
    )


def split_view(bundle: FeatureBundle, split: str) -> FeatureBundle:
    """Bundle restricted to one split, manifest order preserved."""
    if split not in SPLITS:
        raise BundleValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
    indices = [i for i, s in enumerate(bundle.manifest.samples) if s.split == split]
    if not indices:
        raise EmptySplitError(f"split {split!r} has no samples")
    return take_view(bundle, indices)


def bundle_equal(a: FeatureBundle, b: FeatureBundle) -> bool:
    """Bit-exact equality of manifests and arrays."""
    if a.manifest != b.manifest:
        return False
    if set(a.blocks) != set(b.blocks):
        return False
    for name, blk in a.blocks.items():
        other = b.blocks[name]
        if (blk.feature_dim, blk.max_len) != (other.feature_dim, other.max_len):
            return False
        if not np.array_equal(blk.lengths, other.lengths):
            return False
        if blk.data.tobytes() != other.data.tobytes():
            return False
    return True

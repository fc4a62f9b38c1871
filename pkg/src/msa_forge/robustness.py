"""Generalization-ability testing: perturbation generators for the noise
and missing conditions plus tag-stratified evaluation.

Noise is additive zero-mean Gaussian on a modality's valid (unpadded)
frames scaled per sample to a target SNR; text-side token corruption
lives in extractors.corrupt_tokens since it acts before embedding.
Missing means zeroed features with an all-false mask, so models must
degrade gracefully rather than crash. Easy/common/difficult rows cannot
be synthesized; they come from instance_type tags in the manifest.

The tag-stratified report carries both Avg conventions: the unweighted
mean over type rows and the sample-weighted mean (the default).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .analysis import compute_metrics
from .bundle import INSTANCE_TYPES, FeatureBundle, ModalityBlock
from .errors import ValidationError
from .models import Batch, ModalityInput, Model, batch_from_bundle

__all__ = [
    "PerturbationSpec",
    "TypeRow",
    "TaggedEvalReport",
    "add_feature_noise",
    "drop_modality",
    "apply_spec_to_bundle",
    "evaluate_tagged",
    "render_tagged_reports",
]

log = logging.getLogger(__name__)

NO_NOISE = math.inf  # snr_db sentinel: no-noise mode


@dataclass
class PerturbationSpec:
    """One robustness transformation: Gaussian feature noise at a target
    SNR or a dropped (zeroed + masked) modality."""

    kind: str                   # "feature_noise" | "modality_missing"
    modality: str
    snr_db: float | None = None
    seed: int = 0

    def validate(self, bundle_modalities) -> None:
        if self.kind not in ("feature_noise", "modality_missing"):
            raise ValidationError(f"unknown perturbation kind {self.kind!r}")
        if self.modality not in bundle_modalities:
            raise ValidationError(
                f"perturbation targets {self.modality!r}, which is not in the bundle")
        if self.kind == "feature_noise":
            if self.snr_db is None or math.isnan(self.snr_db):
                raise ValidationError("feature_noise needs a finite snr_db (or +inf for none)")

    @property
    def instance_type(self) -> str:
        return "noise" if self.kind == "feature_noise" else "missing"


def _noisy_rows(data: np.ndarray, snr_db: float, rng: np.random.Generator,
                label: str) -> np.ndarray:
    """Additive Gaussian noise on a (frames, dim) slice at the target SNR."""
    power = float(np.mean(data.astype(np.float64) ** 2))
    if power == 0.0:
        log.warning("%s: all-zero features, SNR undefined; left unchanged", label)
        return data
    sigma = math.sqrt(power / (10.0 ** (snr_db / 10.0)))
    noise = rng.normal(0.0, sigma, size=data.shape)
    return (data.astype(np.float64) + noise).astype(np.float32)


def add_feature_noise(block: ModalityBlock, snr_db: float, seed: int) -> ModalityBlock:
    """New block with per-sample Gaussian noise on unpadded frames such
    that 10*log10(signal_power / noise_power) == snr_db. Padding stays
    zero; snr_db == +inf is the identity; all-zero samples are skipped
    with a warning."""
    if math.isnan(snr_db):
        raise ValidationError("snr_db must not be NaN")
    data = block.data.copy()
    if snr_db != NO_NOISE:
        rng = np.random.default_rng(seed)
        for i in range(data.shape[0]):
            ln = int(block.lengths[i])
            data[i, :ln] = _noisy_rows(data[i, :ln], snr_db, rng, f"sample {i}")
    return ModalityBlock(feature_dim=block.feature_dim, max_len=block.max_len,
                         data=data, lengths=block.lengths.copy())


def drop_modality(batch: Batch, modality: str) -> Batch:
    """Copy of the batch with the modality's features zeroed and its mask
    all-false; idempotent. Dropping the last modality that still has any
    valid frames is an error."""
    if modality not in batch.modalities:
        raise ValidationError(f"batch has no modality {modality!r}")
    others_valid = any(m != modality and v.mask.any()
                       for m, v in batch.modalities.items())
    if not others_valid:
        raise ValidationError(
            f"cannot drop {modality!r}: no other modality has valid frames "
            "(model input would be empty)")
    mods = {}
    for m, v in batch.modalities.items():
        if m == modality:
            mods[m] = ModalityInput(data=np.zeros_like(v.data),
                                    mask=np.zeros_like(v.mask))
        else:
            mods[m] = ModalityInput(data=v.data.copy(), mask=v.mask.copy())
    return Batch(modalities=mods, labels=dict(batch.labels), ids=batch.ids)


def _noise_batch(batch: Batch, modality: str, snr_db: float, seed: int) -> Batch:
    if modality not in batch.modalities:
        raise ValidationError(f"batch has no modality {modality!r}")
    mods = {}
    rng = np.random.default_rng(seed)
    for m, v in batch.modalities.items():
        data = v.data.copy()
        if m == modality and snr_db != NO_NOISE:
            for i in range(data.shape[0]):
                valid = v.mask[i]
                if valid.any():
                    data[i, valid] = _noisy_rows(data[i, valid], snr_db, rng,
                                                 f"sample {i}")
        mods[m] = ModalityInput(data=data, mask=v.mask.copy())
    return Batch(modalities=mods, labels=dict(batch.labels), ids=batch.ids)


def perturb_batch(batch: Batch, spec: PerturbationSpec) -> Batch:
    spec.validate(batch.modalities)
    if spec.kind == "feature_noise":
        return _noise_batch(batch, spec.modality, spec.snr_db, spec.seed)
    return drop_modality(batch, spec.modality)


def apply_spec_to_bundle(bundle: FeatureBundle, spec: PerturbationSpec) -> FeatureBundle:
    """Bundle-level perturbation for persisting a stressed dataset.

    Noise perturbs the target block in place (new bundle); missing zeroes
    the target block's features (lengths stay, since blocks cannot have
    zero-length samples; the strict masked variant applies at batch
    level). Samples are retagged with the perturbation's instance type;
    labels are never altered.
    """
    spec.validate(bundle.blocks)
    blocks = {}
    for m, block in bundle.blocks.items():
        if m != spec.modality:
            blocks[m] = ModalityBlock(block.feature_dim, block.max_len,
                                      block.data.copy(), block.lengths.copy())
        elif spec.kind == "feature_noise":
            blocks[m] = add_feature_noise(block, spec.snr_db, spec.seed)
        else:
            blocks[m] = ModalityBlock(block.feature_dim, block.max_len,
                                      np.zeros_like(block.data), block.lengths.copy())
    from dataclasses import replace as dc_replace
    manifest = dc_replace(
        bundle.manifest,
        samples=[dc_replace(s, instance_type=spec.instance_type)
                 for s in bundle.manifest.samples],
    )
    return FeatureBundle(manifest=manifest, blocks=blocks)


# ---------------------------------------------------------------------------
# tag-stratified evaluation
# ---------------------------------------------------------------------------

@dataclass
class TypeRow:
    acc2: float
    f1: float
    n: int


@dataclass
class TaggedEvalReport:
    """Per-instance-type Acc-2/F1 with both Avg conventions and an
    optional per-scenario breakdown."""

    rows: dict[str, TypeRow]
    avg_by_type: TypeRow | None
    avg_by_sample: TypeRow | None
    scenarios: dict[str, TypeRow] = field(default_factory=dict)
    missing_types: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return sum(row.n for row in self.rows.values())

    def as_dict(self) -> dict:
        def row_dict(row):
            return None if row is None else {"acc2": row.acc2, "f1": row.f1, "n": row.n}
        return {
            "rows": {t: row_dict(r) for t, r in self.rows.items()},
            "avg_by_type": row_dict(self.avg_by_type),
            "avg_by_sample": row_dict(self.avg_by_sample),
            "scenarios": {s: row_dict(r) for s, r in self.scenarios.items()},
            "missing_types": list(self.missing_types),
        }


def tagged_report_from_dict(doc: Mapping) -> TaggedEvalReport:
    """Inverse of TaggedEvalReport.as_dict (for report rendering from disk)."""
    def row(entry):
        return None if entry is None else TypeRow(acc2=entry["acc2"], f1=entry["f1"],
                                                  n=entry["n"])
    return TaggedEvalReport(
        rows={t: row(r) for t, r in doc["rows"].items()},
        avg_by_type=row(doc.get("avg_by_type")),
        avg_by_sample=row(doc.get("avg_by_sample")),
        scenarios={s: row(r) for s, r in doc.get("scenarios", {}).items()},
        missing_types=tuple(doc.get("missing_types", ())),
    )


def _predict(model: Model, batch: Batch) -> np.ndarray:
    return model.forward(batch, train=False).pred.data.astype(np.float64)


def evaluate_tagged(model: Model, bundle: FeatureBundle,
                    specs: Sequence[PerturbationSpec] | None = None,
                    *, batch_size: int = 64,
                    binarize: str = "non_negative",
                    f1_average: str = "weighted") -> TaggedEvalReport:
    """Type-stratified evaluation.

    Samples with instance_type tags are scored per tag on clean features.
    Each spec synthesizes a noise/missing variant of every clean sample
    (instance_type not in {noise, missing}) and contributes to that type's
    row. Without tags, specs must be given. A type with no samples is
    reported missing and excluded from the type-mean Avg.
    """
    if bundle.n < 2:
        raise ValidationError("need at least 2 samples to evaluate")
    tags = [s.instance_type for s in bundle.manifest.samples]
    if specs is None and all(t is None for t in tags):
        raise ValidationError(
            "samples carry no instance_type tags and no perturbation specs were given")

    labels = bundle.labels()
    per_type: dict[str, tuple[list, list]] = {t: ([], []) for t in INSTANCE_TYPES}

    # clean pass over everything (tag rows + scenario breakdown)
    clean_preds = np.empty(bundle.n, dtype=np.float64)
    for start in range(0, bundle.n, batch_size):
        idx = np.arange(start, min(start + batch_size, bundle.n))
        batch = batch_from_bundle(bundle, idx, model.dtype)
        clean_preds[idx] = _predict(model, batch)
    for i, tag in enumerate(tags):
        if tag is not None:
            per_type[tag][0].append(clean_preds[i])
            per_type[tag][1].append(labels[i])

    # synthesized variants from clean samples
    if specs:
        clean_idx = np.array([i for i, t in enumerate(tags)
                              if t not in ("noise", "missing")], dtype=np.int64)
        for spec in specs:
            spec.validate(bundle.blocks)
            if clean_idx.size == 0:
                continue
            for start in range(0, clean_idx.size, batch_size):
                idx = clean_idx[start:start + batch_size]
                batch = batch_from_bundle(bundle, idx, model.dtype)
                preds = _predict(model, perturb_batch(batch, spec))
                per_type[spec.instance_type][0].extend(preds)
                per_type[spec.instance_type][1].extend(labels[idx])

    rows: dict[str, TypeRow] = {}
    missing: list[str] = []
    for t in INSTANCE_TYPES:
        preds, labs = per_type[t]
        if len(preds) >= 2:
            rep = compute_metrics(np.array(preds), np.array(labs), binarize=binarize,
                                  f1_average=f1_average, strict_corr=False)
            rows[t] = TypeRow(acc2=rep.acc2, f1=rep.f1, n=rep.n)
        else:
            missing.append(t)

    if not rows:
        raise ValidationError("no instance type ended up with >= 2 samples")
    avg_by_type = TypeRow(
        acc2=float(np.mean([r.acc2 for r in rows.values()])),
        f1=float(np.mean([r.f1 for r in rows.values()])),
        n=sum(r.n for r in rows.values()),
    )
    total = avg_by_type.n
    avg_by_sample = TypeRow(
        acc2=sum(r.acc2 * r.n for r in rows.values()) / total,
        f1=sum(r.f1 * r.n for r in rows.values()) / total,
        n=total,
    )

    scenarios: dict[str, TypeRow] = {}
    scen_tags = [s.scenario for s in bundle.manifest.samples]
    for scen in sorted({s for s in scen_tags if s is not None}):
        idx = [i for i, s in enumerate(scen_tags) if s == scen]
        if len(idx) >= 2:
            rep = compute_metrics(clean_preds[idx], labels[idx], binarize=binarize,
                                  f1_average=f1_average, strict_corr=False)
            scenarios[scen] = TypeRow(acc2=rep.acc2, f1=rep.f1, n=rep.n)

    return TaggedEvalReport(rows=rows, avg_by_type=avg_by_type,
                            avg_by_sample=avg_by_sample, scenarios=scenarios,
                            missing_types=tuple(missing))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_TYPE_LABELS = {"easy": "Easy", "common": "Common", "difficult": "Difficult",
                "noise": "Noise", "missing": "Missing"}


def _cell(row: TypeRow | None) -> str:
    if row is None:
        return "n/a"
    return f"{row.acc2 * 100:.1f} / {row.f1 * 100:.1f}"


def render_tagged_reports(reports: Mapping[str, TaggedEvalReport],
                          fmt: str = "markdown", avg: str = "both") -> str:
    """Robustness grid: rows Easy/Common/Difficult/Noise/Missing/Avg,
    one "Acc-2 / F1" column per model (percentages, one decimal).

    ``avg`` picks the Avg convention: "sample" (weighted by row counts,
    the default elsewhere), "type" (unweighted mean over rows), or "both".
    """
    if not reports:
        raise ValidationError("empty reports map")
    if avg not in ("sample", "type", "both"):
        raise ValidationError(f"unknown avg convention {avg!r}")
    models = list(reports)
    table: list[list[str]] = []
    any_missing = False
    for t in INSTANCE_TYPES:
        row = [_TYPE_LABELS[t]]
        for m in models:
            cell = _cell(reports[m].rows.get(t))
            any_missing |= cell == "n/a"
            row.append(cell)
        table.append(row)
    avg_rows = []
    if avg in ("sample", "both"):
        avg_rows.append(["Avg (sample-weighted)" if avg == "both" else "Avg"]
                        + [_cell(reports[m].avg_by_sample) for m in models])
    if avg in ("type", "both"):
        avg_rows.append(["Avg (type-mean)" if avg == "both" else "Avg"]
                        + [_cell(reports[m].avg_by_type) for m in models])
    table.extend(avg_rows)

    if fmt == "json":
        return json.dumps({m: reports[m].as_dict() for m in models}, indent=2)
    header = ["Types"] + [f"{m} Acc-2 / F1" for m in models]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(table)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in table]
        if any_missing:
            lines.append("")
            lines.append("n/a: type with no samples, excluded from the type-mean Avg.")
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown report format {fmt!r}")

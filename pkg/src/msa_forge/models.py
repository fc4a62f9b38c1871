"""Benchmark fusion architectures over padded multimodal batches.

Every model consumes a :class:`Batch` (per-modality padded arrays plus
validity masks) and produces a :class:`ModelOutput` carrying a continuous
sentiment prediction, the fusion representation, and, where the
architecture has them, explicit unimodal representations. The registry
covers late fusion (lf_dnn), early fusion (ef_lstm), outer-product tensor
fusion (tfn), its low-rank factorization (lmf), a gated-memory multi-view
recurrent model (mfn), a lite directional cross-modal attention model
(mult), a lite shared/private subspace model (misa), and multi-task
variants (mlf_dnn, mtfn, mlmf) trained against unimodal labels.

Sequences are never assumed to be word-aligned across modalities: models
pool or cross-attend per modality using the masks.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .bundle import MODALITIES, FeatureBundle
from .errors import ModelError, ShapeError

__all__ = [
    "ModelConfig",
    "ModalityInput",
    "Batch",
    "ModelOutput",
    "Model",
    "build_model",
    "model_forward",
    "multitask_wrap",
    "lmf_full_tensor_expand",
    "batch_from_bundle",
    "save_checkpoint",
    "load_checkpoint",
    "MODEL_REGISTRY",
    "MULTITASK_BASES",
    "OUT_OF_SCOPE_MODELS",
]

UNI_LABEL_KEYS = {"text": "t", "audio": "a", "vision": "v"}


def _default_hidden() -> dict[str, int]:
    return {"text": 32, "audio": 16, "vision": 16}


@dataclass
class ModelConfig:
    """Architecture hyperparameters shared by the registry.

    ``feature_dims``/``seq_lens`` map present modalities to their input
    feature dim and padded length. Defaults are plumbing choices except
    post_fusion_dim, which follows the published override example.
    """

    model_name: str
    feature_dims: dict[str, int] | None = None
    seq_lens: dict[str, int] | None = None
    hidden_dims: dict[str, int] = field(default_factory=_default_hidden)
    post_fusion_dim: int = 32
    lmf_rank: int = 4
    mfn_mem_dim: int = 64
    attn_heads: int = 2
    attn_layers: int = 1
    mult_hidden: int = 16
    misa_sim_weight: float = 0.1
    misa_orth_weight: float = 0.1
    misa_recon_weight: float = 0.1
    multitask_uni_weight: float = 1.0
    dropout: float = 0.1
    seed: int = 1111
    dtype: str = "f32"

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32

    def modalities(self) -> list[str]:
        if self.feature_dims is None:
            raise ModelError(f"{self.model_name}: feature_dims not set "
                             "(derive them from a bundle or pass them explicitly)")
        return [m for m in MODALITIES if m in self.feature_dims]

    def validate(self) -> None:
        dims = self.feature_dims or {}
        for m, d in dims.items():
            if m not in MODALITIES:
                raise ModelError(f"unknown modality {m!r} in feature_dims")
            if d <= 0:
                raise ModelError(f"feature dim for {m!r} must be positive, got {d}")
        for m in dims:
            if self.hidden_dims.get(m, 0) <= 0:
                raise ModelError(f"hidden dim for {m!r} must be positive")
        if self.post_fusion_dim <= 0:
            raise ModelError("post_fusion_dim must be positive")
        if self.lmf_rank < 1:
            raise ModelError(f"lmf_rank must be >= 1, got {self.lmf_rank}")
        if self.mfn_mem_dim <= 0 or self.mult_hidden <= 0:
            raise ModelError("memory/attention hidden dims must be positive")
        if self.mult_hidden % self.attn_heads != 0:
            raise ModelError(
                f"mult_hidden {self.mult_hidden} not divisible by attn_heads {self.attn_heads}")
        for name in ("misa_sim_weight", "misa_orth_weight", "misa_recon_weight",
                     "multitask_uni_weight"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("f32", "f64"):
            raise ModelError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")

    @classmethod
    def for_bundle(cls, model_name: str, bundle: FeatureBundle, **overrides) -> "ModelConfig":
        dims = {m: b.feature_dim for m, b in bundle.blocks.items()}
        lens = {m: b.max_len for m, b in bundle.blocks.items()}
        cfg = cls(model_name=model_name, feature_dims=dims, seq_lens=lens)
        if overrides:
            cfg = replace(cfg, **overrides)
        return cfg


@dataclass
class ModalityInput:
    data: np.ndarray   # (B, T, d)
    mask: np.ndarray   # (B, T) bool


@dataclass
class Batch:
    modalities: dict[str, ModalityInput]
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    ids: list[str] | None = None

    @property
    def size(self) -> int:
        first = next(iter(self.modalities.values()))
        return first.data.shape[0]


def batch_from_bundle(bundle: FeatureBundle, indices=None,
                      dtype=np.float32) -> Batch:
    """Padded model input for the given sample indices (all by default)."""
    if indices is None:
        indices = np.arange(bundle.n)
    indices = np.asarray(indices, dtype=np.int64)
    mods = {}
    for name, block in bundle.blocks.items():
        mask = block.mask()[indices]
        mods[name] = ModalityInput(data=block.data[indices].astype(dtype), mask=mask)
    samples = [bundle.manifest.samples[i] for i in indices]
    labels: dict[str, np.ndarray] = {
        "m": np.array([s.label_m for s in samples], dtype=np.float64)}
    for mod, key in UNI_LABEL_KEYS.items():
        if mod in bundle.blocks:
            vals = [s.unimodal_label(mod) for s in samples]
            if all(v is not None for v in vals):
                labels[key] = np.array(vals, dtype=np.float64)
    return Batch(modalities=mods, labels=labels, ids=[s.id for s in samples])


@dataclass
class ModelOutput:
    pred: Tensor                              # (B,)
    fusion_rep: Tensor                        # (B, d_f)
    uni_reps: dict[str, Tensor] | None = None
    aux_preds: dict[str, Tensor] | None = None
    aux_loss: Tensor | None = None


# ---------------------------------------------------------------------------
# parameter plumbing
# ---------------------------------------------------------------------------

def _init_linear(params: ParamSet, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, dtype) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    params.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
    params.add(f"{name}.b", rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype))


def _affine(params: ParamSet, name: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _init_lstm(params: ParamSet, name: str, d_in: int, hidden: int,
               rng: np.random.Generator, dtype) -> None:
    bound = 1.0 / math.sqrt(hidden)
    params.add(f"{name}.wx", rng.uniform(-bound, bound, size=(d_in, 4 * hidden)).astype(dtype))
    params.add(f"{name}.wh", rng.uniform(-bound, bound, size=(hidden, 4 * hidden)).astype(dtype))
    params.add(f"{name}.b", rng.uniform(-bound, bound, size=(4 * hidden,)).astype(dtype))


def _lstm_params(params: ParamSet, name: str) -> dict[str, Tensor]:
    return {"wx": params[f"{name}.wx"], "wh": params[f"{name}.wh"], "b": params[f"{name}.b"]}


class Model:
    """Base class: owns the config, the ParamSet, and the training loss."""

    has_uni_reps = False
    needs_unimodal_labels = False

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.name = config.model_name
        self.params = ParamSet()
        self._init_rng = np.random.default_rng(config.seed)
        self._dropout_rng = np.random.default_rng([config.seed, 0xD0])
        self.uni_rep_dims: dict[str, int] = {}

    # -- shared building blocks ------------------------------------------
    @property
    def dtype(self):
        return self.config.np_dtype

    def modalities(self) -> list[str]:
        return self.config.modalities()

    def _check_batch(self, batch: Batch) -> None:
        for m in self.modalities():
            if m not in batch.modalities:
                raise ShapeError(f"batch is missing modality {m!r}")
            d = batch.modalities[m].data.shape[-1]
            if d != self.config.feature_dims[m]:
                raise ShapeError(
                    f"modality {m!r}: batch dim {d} != config dim {self.config.feature_dims[m]}")

    def _init_encoder(self, prefix: str, m: str) -> None:
        d, h = self.config.feature_dims[m], self.config.hidden_dims[m]
        _init_linear(self.params, f"{prefix}.{m}.l1", d, h, self._init_rng, self.dtype)
        _init_linear(self.params, f"{prefix}.{m}.l2", h, h, self._init_rng, self.dtype)

    def _encode(self, prefix: str, m: str, batch: Batch, train: bool) -> Tensor:
        mod = batch.modalities[m]
        pooled = ad.masked_mean(Tensor(mod.data), mod.mask)
        h = ad.relu(_affine(self.params, f"{prefix}.{m}.l1", pooled))
        h = ad.dropout(h, self.config.dropout, train, self._dropout_rng)
        return ad.relu(_affine(self.params, f"{prefix}.{m}.l2", h))

    def _init_head(self, prefix: str, d_in: int, hidden: int) -> None:
        _init_linear(self.params, f"{prefix}.l1", d_in, hidden, self._init_rng, self.dtype)
        _init_linear(self.params, f"{prefix}.l2", hidden, 1, self._init_rng, self.dtype)

    def _head(self, prefix: str, x: Tensor, train: bool) -> tuple[Tensor, Tensor]:
        hidden = ad.relu(_affine(self.params, f"{prefix}.l1", x))
        hidden = ad.dropout(hidden, self.config.dropout, train, self._dropout_rng)
        pred = _affine(self.params, f"{prefix}.l2", hidden)
        return ad.reshape(pred, (-1,)), hidden

    # -- interface ---------------------------------------------------------
    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        raise NotImplementedError

    def loss(self, output: ModelOutput, batch: Batch) -> Tensor:
        target = Tensor(batch.labels["m"].astype(self.dtype))
        total = ad.l1_loss(output.pred, target)
        if output.aux_loss is not None:
            total = ad.add(total, output.aux_loss)
        return total


class LFDNN(Model):
    """Per-modality encoders (masked-mean pooling into a 2-layer MLP),
    concatenation, and an MLP head: late fusion."""

    has_uni_reps = True

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        for m in self.modalities():
            self._init_encoder("enc", m)
            self.uni_rep_dims[m] = config.hidden_dims[m]
        total = sum(config.hidden_dims[m] for m in self.modalities())
        self._init_head("head", total, config.post_fusion_dim)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        uni = {m: self._encode("enc", m, batch, train) for m in self.modalities()}
        fused_in = ad.concat([uni[m] for m in self.modalities()], axis=1)
        pred, hidden = self._head("head", fused_in, train)
        return ModelOutput(pred=pred, fusion_rep=hidden, uni_reps=uni)


class EFLSTM(Model):
    """Frame-level concatenation of all modalities into one LSTM: early
    fusion. Sequences are zero-padded to a common length; a sample's step
    is applied where any modality is valid, so the final state is the
    last-valid state."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        mods = self.modalities()
        d_total = sum(config.feature_dims[m] for m in mods)
        self.hidden = config.hidden_dims[mods[0]]
        _init_lstm(self.params, "lstm", d_total, self.hidden, self._init_rng, self.dtype)
        self._init_head("head", self.hidden, config.post_fusion_dim)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        mods = self.modalities()
        b = batch.size
        t_common = max(batch.modalities[m].data.shape[1] for m in mods)
        pieces, union = [], np.zeros((b, t_common), dtype=bool)
        for m in mods:
            mod = batch.modalities[m]
            t_m = mod.data.shape[1]
            padded = np.zeros((b, t_common, mod.data.shape[2]), dtype=self.dtype)
            padded[:, :t_m] = mod.data
            pieces.append(padded)
            union[:, :t_m] |= mod.mask
        x = np.concatenate(pieces, axis=2)

        h = Tensor(np.zeros((b, self.hidden), dtype=self.dtype))
        c = Tensor(np.zeros((b, self.hidden), dtype=self.dtype))
        lstm = _lstm_params(self.params, "lstm")
        for t in range(t_common):
            h_new, c_new = ad.lstm_cell_step(Tensor(x[:, t, :]), h, c, lstm)
            step = union[:, t].astype(self.dtype)[:, None]
            h = ad.add(ad.mul(h_new, step), ad.mul(h, 1.0 - step))
            c = ad.add(ad.mul(c_new, step), ad.mul(c, 1.0 - step))
        pred, hidden = self._head("head", h, train)
        return ModelOutput(pred=pred, fusion_rep=hidden)


class TFN(Model):
    """Encoders feed a constant-augmented outer product capturing uni-,
    bi-, and tri-modal interaction terms, then a post-fusion MLP."""

    has_uni_reps = True

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        mods = self.modalities()
        if len(mods) < 2:
            raise ModelError("tfn needs at least two modalities")
        for m in mods:
            self._init_encoder("enc", m)
            self.uni_rep_dims[m] = config.hidden_dims[m]
        fused = 1
        for m in mods:
            fused *= config.hidden_dims[m] + 1
        self.fusion_tensor_len = fused
        self._init_head("post", fused, config.post_fusion_dim)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        uni = {m: self._encode("enc", m, batch, train) for m in self.modalities()}
        fused_in = ad.outer_fusion([uni[m] for m in self.modalities()], augment=True)
        pred, hidden = self._head("post", fused_in, train)
        return ModelOutput(pred=pred, fusion_rep=hidden, uni_reps=uni)


class LMF(Model):
    """Low-rank factorization of the tensor-fusion weight tensor: per
    modality, rank-many factor matrices over the 1-augmented encoding;
    fusion is the elementwise product of per-modality projections summed
    over rank with output weights."""

    has_uni_reps = True

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        mods = self.modalities()
        if len(mods) < 2:
            raise ModelError("lmf needs at least two modalities")
        rank, out = config.lmf_rank, config.post_fusion_dim
        for m in mods:
            self._init_encoder("enc", m)
            self.uni_rep_dims[m] = config.hidden_dims[m]
            h = config.hidden_dims[m]
            bound = 1.0 / math.sqrt(h + 1)
            self.params.add(f"lmf.{m}.factor",
                            self._init_rng.uniform(-bound, bound,
                                                   size=(rank, h + 1, out)).astype(self.dtype))
        bound = 1.0 / math.sqrt(rank)
        self.params.add("lmf.weights",
                        self._init_rng.uniform(-bound, bound, size=(1, rank)).astype(self.dtype))
        self.params.add("lmf.bias",
                        self._init_rng.uniform(-bound, bound, size=(out,)).astype(self.dtype))
        _init_linear(self.params, "out", out, 1, self._init_rng, self.dtype)

    def _fuse(self, uni: dict[str, Tensor]) -> Tensor:
        b = next(iter(uni.values())).shape[0]
        ones = Tensor(np.ones((b, 1), dtype=self.dtype))
        prod = None
        for m in self.modalities():
            aug = ad.concat([ones, uni[m]], axis=1)                # (B, h+1)
            proj = ad.matmul(aug, self.params[f"lmf.{m}.factor"])  # (rank, B, out)
            prod = proj if prod is None else ad.mul(prod, proj)
        mixed = ad.matmul(self.params["lmf.weights"],
                          ad.transpose(prod, (1, 0, 2)))           # (B, 1, out)
        fused = ad.reshape(mixed, (b, -1))
        return ad.add(fused, self.params["lmf.bias"])

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        uni = {m: self._encode("enc", m, batch, train) for m in self.modalities()}
        fused = self._fuse(uni)
        fused = ad.dropout(fused, self.config.dropout, train, self._dropout_rng)
        pred = ad.reshape(_affine(self.params, "out", fused), (-1,))
        return ModelOutput(pred=pred, fusion_rep=fused, uni_reps=uni)


def lmf_full_tensor_expand(model: Model) -> np.ndarray:
    """Reconstruct the explicit fusion weight tensor of an LMF model as a
    sum over rank of per-modality factor outer products.

    Contracting the 1-augmented encodings against the result (then adding
    the fusion bias) reproduces the LMF fusion output. The returned array
    has one axis of size h_m + 1 per modality plus a trailing output axis.
    """
    if not isinstance(model, LMF):
        raise ModelError(f"lmf_full_tensor_expand needs an LMF model, got {model.name!r}")
    mods = model.modalities()
    letters = "ijk"[:len(mods)]
    factors = [model.params[f"lmf.{m}.factor"].data.astype(np.float64) for m in mods]
    weights = model.params["lmf.weights"].data.astype(np.float64)[0]
    spec = ",".join(["r"] + [f"r{x}o" for x in letters]) + "->" + letters + "o"
    return np.einsum(spec, weights, *factors)


class MFN(Model):
    """One LSTM per modality stepped in lockstep; each step, attention
    over the concatenated memory deltas writes a gated memory
    u_t = g1 * u_{t-1} + g2 * tanh(candidate)."""

    has_uni_reps = True

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        mods = self.modalities()
        for m in mods:
            _init_lstm(self.params, f"lstm.{m}", config.feature_dims[m],
                       config.hidden_dims[m], self._init_rng, self.dtype)
            self.uni_rep_dims[m] = config.hidden_dims[m]
        delta = 2 * sum(config.hidden_dims[m] for m in mods)
        mem = config.mfn_mem_dim
        _init_linear(self.params, "att", delta, delta, self._init_rng, self.dtype)
        _init_linear(self.params, "cand", delta, mem, self._init_rng, self.dtype)
        _init_linear(self.params, "gate1", delta, mem, self._init_rng, self.dtype)
        _init_linear(self.params, "gate2", delta, mem, self._init_rng, self.dtype)
        total = sum(config.hidden_dims[m] for m in mods) + mem
        self._init_head("head", total, config.post_fusion_dim)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        mods = self.modalities()
        b = batch.size
        t_common = max(batch.modalities[m].data.shape[1] for m in mods)
        h = {m: Tensor(np.zeros((b, self.config.hidden_dims[m]), dtype=self.dtype))
             for m in mods}
        c = dict(h)
        u = Tensor(np.zeros((b, self.config.mfn_mem_dim), dtype=self.dtype))
        union = np.zeros((b, t_common), dtype=bool)
        for m in mods:
            union[:, :batch.modalities[m].mask.shape[1]] |= batch.modalities[m].mask

        for t in range(t_common):
            c_prev = [c[m] for m in mods]
            for m in mods:
                mod = batch.modalities[m]
                if t >= mod.data.shape[1]:
                    continue
                h_new, c_new = ad.lstm_cell_step(
                    Tensor(mod.data[:, t, :]), h[m], c[m], _lstm_params(self.params, f"lstm.{m}"))
                step = mod.mask[:, t].astype(self.dtype)[:, None]
                h[m] = ad.add(ad.mul(h_new, step), ad.mul(h[m], 1.0 - step))
                c[m] = ad.add(ad.mul(c_new, step), ad.mul(c[m], 1.0 - step))
            delta = ad.concat(c_prev + [c[m] for m in mods], axis=1)
            att = ad.softmax(_affine(self.params, "att", delta), axis=-1)
            attended = ad.mul(delta, att)
            cand = ad.tanh(_affine(self.params, "cand", attended))
            g1 = ad.sigmoid(_affine(self.params, "gate1", attended))
            g2 = ad.sigmoid(_affine(self.params, "gate2", attended))
            u_new = ad.add(ad.mul(g1, u), ad.mul(g2, cand))
            step = union[:, t].astype(self.dtype)[:, None]
            u = ad.add(ad.mul(u_new, step), ad.mul(u, 1.0 - step))

        rep = ad.concat([h[m] for m in mods] + [u], axis=1)
        pred, hidden = self._head("head", rep, train)
        return ModelOutput(pred=pred, fusion_rep=hidden,
                           uni_reps={m: h[m] for m in mods})


class MulTLite(Model):
    """Directional pairwise cross-modal attention: for every ordered
    modality pair the target queries the source through multi-head scaled
    dot attention with residuals (no layer norm), then masked-mean pooled
    translated streams concatenate into the head."""

    has_uni_reps = True

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        mods = self.modalities()
        if len(mods) < 2:
            raise ModelError("mult needs at least two modalities")
        hid = config.mult_hidden
        for m in mods:
            _init_linear(self.params, f"proj.{m}", config.feature_dims[m], hid,
                         self._init_rng, self.dtype)
            self.uni_rep_dims[m] = hid
        self.pairs = [(tgt, src) for tgt in mods for src in mods if tgt != src]
        for tgt, src in self.pairs:
            for layer in range(config.attn_layers):
                base = f"x.{tgt}_{src}.l{layer}"
                _init_linear(self.params, f"{base}.q", hid, hid, self._init_rng, self.dtype)
                _init_linear(self.params, f"{base}.k", hid, hid, self._init_rng, self.dtype)
                _init_linear(self.params, f"{base}.v", hid, hid, self._init_rng, self.dtype)
        self._init_head("head", len(self.pairs) * hid, config.post_fusion_dim)

    def _multihead(self, base: str, cur: Tensor, src: Tensor,
                   src_mask: np.ndarray) -> Tensor:
        q = _affine(self.params, f"{base}.q", cur)
        k = _affine(self.params, f"{base}.k", src)
        v = _affine(self.params, f"{base}.v", src)
        head_dim = self.config.mult_hidden // self.config.attn_heads
        outs = []
        for i in range(self.config.attn_heads):
            cols = (slice(None), slice(None), slice(i * head_dim, (i + 1) * head_dim))
            outs.append(ad.scaled_dot_attention(
                ad.slice_(q, cols), ad.slice_(k, cols), ad.slice_(v, cols),
                mask=src_mask, empty_policy="zero"))
        return ad.concat(outs, axis=-1)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        mods = self.modalities()
        proj = {m: ad.relu(_affine(self.params, f"proj.{m}",
                                   Tensor(batch.modalities[m].data))) for m in mods}
        pooled = []
        for tgt, src in self.pairs:
            cur = proj[tgt]
            for layer in range(self.config.attn_layers):
                att = self._multihead(f"x.{tgt}_{src}.l{layer}", cur, proj[src],
                                      batch.modalities[src].mask)
                cur = ad.add(cur, att)
            pooled.append(ad.masked_mean(cur, batch.modalities[tgt].mask))
        fused_in = ad.concat(pooled, axis=1)
        fused_in = ad.dropout(fused_in, self.config.dropout, train, self._dropout_rng)
        pred, hidden = self._head("head", fused_in, train)
        uni = {m: ad.masked_mean(proj[m], batch.modalities[m].mask) for m in mods}
        return ModelOutput(pred=pred, fusion_rep=hidden, uni_reps=uni)


class MISALite(Model):
    """Shared-space and private-space projections per modality with
    similarity, orthogonality, and reconstruction auxiliary losses.

    Every encoder outputs a common width (the text hidden size) so one
    shared projection serves all modalities. Similarity is the mean
    pairwise squared distance between shared projections; orthogonality
    is the squared (mean-normalized) Frobenius inner product between each
    modality's shared and private projections; reconstruction decodes
    shared+private back to the encoder output under MSE.
    """

    has_uni_reps = True

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        mods = self.modalities()
        if len(mods) < 2:
            raise ModelError("misa needs at least two modalities")
        self.common = config.hidden_dims[mods[0]]
        for m in mods:
            d = config.feature_dims[m]
            _init_linear(self.params, f"enc.{m}.l1", d, self.common, self._init_rng, self.dtype)
            _init_linear(self.params, f"enc.{m}.l2", self.common, self.common,
                         self._init_rng, self.dtype)
            self.uni_rep_dims[m] = self.common
            _init_linear(self.params, f"priv.{m}", self.common, self.common,
                         self._init_rng, self.dtype)
        _init_linear(self.params, "shared", self.common, self.common,
                     self._init_rng, self.dtype)
        _init_linear(self.params, "dec", self.common, self.common, self._init_rng, self.dtype)
        self._init_head("head", 2 * len(mods) * self.common, config.post_fusion_dim)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        self._check_batch(batch)
        mods = self.modalities()
        cfg = self.config
        base = {m: self._encode("enc", m, batch, train) for m in mods}
        shared = {m: ad.relu(_affine(self.params, "shared", base[m])) for m in mods}
        private = {m: ad.relu(_affine(self.params, f"priv.{m}", base[m])) for m in mods}

        sim_terms = []
        for i, m1 in enumerate(mods):
            for m2 in mods[i + 1:]:
                diff = ad.sub(shared[m1], shared[m2])
                sim_terms.append(ad.mean_(ad.mul(diff, diff)))
        sim = sim_terms[0]
        for term in sim_terms[1:]:
            sim = ad.add(sim, term)
        sim = ad.mul(sim, 1.0 / len(sim_terms))

        orth = None
        for m in mods:
            inner = ad.mean_(ad.mul(shared[m], private[m]))
            sq = ad.mul(inner, inner)
            orth = sq if orth is None else ad.add(orth, sq)

        recon = None
        for m in mods:
            dec = _affine(self.params, "dec", ad.add(shared[m], private[m]))
            term = ad.mse_loss(dec, base[m])
            recon = term if recon is None else ad.add(recon, term)
        recon = ad.mul(recon, 1.0 / len(mods))

        aux = ad.add(ad.add(ad.mul(sim, cfg.misa_sim_weight),
                            ad.mul(orth, cfg.misa_orth_weight)),
                     ad.mul(recon, cfg.misa_recon_weight))

        fused_in = ad.concat([shared[m] for m in mods] + [private[m] for m in mods], axis=1)
        pred, hidden = self._head("head", fused_in, train)
        return ModelOutput(pred=pred, fusion_rep=hidden, uni_reps=base, aux_loss=aux)


class MultitaskWrapper(Model):
    """Adds per-modality linear heads on the base model's unimodal
    representations; total loss = task loss + uni_weight * sum of
    per-modality L1 losses against the unimodal labels."""

    has_uni_reps = True
    needs_unimodal_labels = True

    def __init__(self, base: Model, uni_weight: float, name: str | None = None):
        if not base.has_uni_reps:
            raise ModelError(
                f"cannot multitask-wrap {base.name!r}: it exposes no unimodal representations")
        if uni_weight < 0:
            raise ModelError(f"uni_weight must be >= 0, got {uni_weight}")
        self.base = base
        self.config = base.config
        self.name = name or f"m{base.name}"
        self.params = base.params
        self.uni_weight = uni_weight
        self.uni_rep_dims = base.uni_rep_dims
        self._init_rng = base._init_rng
        self._dropout_rng = base._dropout_rng
        for m in base.modalities():
            _init_linear(self.params, f"aux.{m}", base.uni_rep_dims[m], 1,
                         self._init_rng, self.dtype)

    def forward(self, batch: Batch, train: bool = False) -> ModelOutput:
        out = self.base.forward(batch, train)
        aux_preds = {
            m: ad.reshape(_affine(self.params, f"aux.{m}", out.uni_reps[m]), (-1,))
            for m in self.base.modalities()
        }
        return ModelOutput(pred=out.pred, fusion_rep=out.fusion_rep,
                           uni_reps=out.uni_reps, aux_preds=aux_preds,
                           aux_loss=out.aux_loss)

    def loss(self, output: ModelOutput, batch: Batch) -> Tensor:
        total = super().loss(output, batch)
        for m in self.base.modalities():
            key = UNI_LABEL_KEYS[m]
            if key not in batch.labels:
                raise ModelError(
                    f"model {self.name!r} trains on unimodal labels but the batch has no "
                    f"label_{key} (the bundle must provide them for every sample)")
            target = Tensor(batch.labels[key].astype(self.dtype))
            total = ad.add(total, ad.mul(ad.l1_loss(output.aux_preds[m], target),
                                         self.uni_weight))
        return total


def multitask_wrap(model: Model, uni_weight: float) -> Model:
    """Wrap a fusion model for multi-task training against unimodal labels."""
    return MultitaskWrapper(model, uni_weight)


MODEL_REGISTRY: dict[str, type] = {
    "lf_dnn": LFDNN,
    "ef_lstm": EFLSTM,
    "tfn": TFN,
    "lmf": LMF,
    "mfn": MFN,
    "mult": MulTLite,
    "misa": MISALite,
}

MULTITASK_BASES = {"mlf_dnn": "lf_dnn", "mtfn": "tfn", "mlmf": "lmf"}

OUT_OF_SCOPE_MODELS = {
    "bert_mag": "not implemented: requires pretrained backbone",
    "graph_mfn": "not implemented: requires dynamic fusion-graph construction",
    "mfm": "not implemented: requires generative factorization",
    "self_mm": "not implemented: requires self-supervised label generation",
}


def build_model(config: ModelConfig) -> Model:
    """Construct a registered model with seeded uniform(+-1/sqrt(fan_in))
    initialization."""
    name = config.model_name
    if name in OUT_OF_SCOPE_MODELS:
        raise ModelError(f"{name}: {OUT_OF_SCOPE_MODELS[name]}")
    if name in MULTITASK_BASES:
        base_cfg = replace(config, model_name=MULTITASK_BASES[name])
        base = MODEL_REGISTRY[MULTITASK_BASES[name]](base_cfg)
        wrapper = MultitaskWrapper(base, config.multitask_uni_weight, name=name)
        return wrapper
    if name not in MODEL_REGISTRY:
        known = sorted(list(MODEL_REGISTRY) + list(MULTITASK_BASES))
        raise ModelError(f"unknown model {name!r}; known models: {known}")
    return MODEL_REGISTRY[name](config)


def model_forward(model: Model, batch: Batch, train_mode: bool = False) -> ModelOutput:
    """Functional alias for model.forward."""
    return model.forward(batch, train=train_mode)


# ---------------------------------------------------------------------------
# checkpoints: manifest.json + params.bin (named binary blocks)
# ---------------------------------------------------------------------------

_BLOCK_HEADER = struct.Struct("<4sIIII")
_BLOCK_MAGIC = b"MSAB"
_BLOCK_VERSION = 1


def _write_named_block(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    shape3 = (1,) * (3 - arr.ndim) + arr.shape
    if len(shape3) != 3:
        raise ShapeError(f"cannot store parameter {name!r} with ndim {arr.ndim}")
    fh.write(_BLOCK_HEADER.pack(_BLOCK_MAGIC, _BLOCK_VERSION, *shape3))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_named_blocks(path: Path) -> dict[str, np.ndarray]:
    raw = path.read_bytes()
    out: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        magic, version, a, b, c = _BLOCK_HEADER.unpack_from(raw, pos)
        if magic != _BLOCK_MAGIC or version != _BLOCK_VERSION:
            raise ModelError(f"{path.name}: bad block header for {name!r}")
        pos += _BLOCK_HEADER.size
        count = a * b * c
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(a, b, c)
        pos += 4 * count
        out[name] = np.ascontiguousarray(arr)
    return out


def write_named_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Store named float arrays as consecutive binary blocks (float32)."""
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            _write_named_block(fh, name, np.asarray(arr))


def read_named_arrays(path) -> dict[str, np.ndarray]:
    """Inverse of write_named_arrays; shapes come back 3-D (leading ones)."""
    return _read_named_blocks(Path(path))


def save_checkpoint(model: Model, path, seed: int | None = None) -> None:
    """Persist model_name, config, seed, and all parameters (float32)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "model_name": model.name,
        "config": asdict(model.config),
        "seed": seed if seed is not None else model.config.seed,
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in model.params.items()],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    with open(root / "params.bin", "wb") as fh:
        for name, p in model.params.items():
            _write_named_block(fh, name, p.data)


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild the model from a checkpoint directory and restore weights."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ModelError(f"no checkpoint manifest under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    cfg_dict = dict(manifest["config"])
    cfg_dict["model_name"] = manifest["model_name"]
    config = ModelConfig(**cfg_dict)
    model = build_model(config)
    blocks = _read_named_blocks(root / "params.bin")
    state = {}
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in blocks:
            raise ModelError(f"checkpoint is missing parameter {name!r}")
        state[name] = blocks[name].reshape(shape)
    model.params.load_state(state)
    return model, manifest

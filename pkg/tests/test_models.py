"""Model zoo tests: registry behavior, architecture oracles, the LMF/full
tensor equivalence, multitask wrapping, and checkpoint round-trips."""

import numpy as np
import pytest

from msa_forge.autodiff import Tape, backward, grad_check
from msa_forge.errors import ModelError
from msa_forge.models import (
    Batch,
    ModalityInput,
    ModelConfig,
    build_model,
    lmf_full_tensor_expand,
    load_checkpoint,
    model_forward,
    multitask_wrap,
    save_checkpoint,
)


def toy_config(model_name, seed=7, dtype="f32", **overrides):
    base = dict(
        model_name=model_name,
        feature_dims={"text": 3, "audio": 2, "vision": 2},
        seq_lens={"text": 4, "audio": 5, "vision": 3},
        hidden_dims={"text": 4, "audio": 3, "vision": 3},
        post_fusion_dim=4,
        lmf_rank=2,
        mfn_mem_dim=4,
        mult_hidden=4,
        attn_heads=2,
        dropout=0.0,
        seed=seed,
        dtype=dtype,
    )
    base.update(overrides)
    return ModelConfig(**base)


def toy_batch(config, b=2, seed=3, with_uni_labels=True):
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype
    mods = {}
    for m, d in config.feature_dims.items():
        t = config.seq_lens[m]
        lengths = rng.integers(1, t + 1, size=b)
        data = np.zeros((b, t, d), dtype=dtype)
        mask = np.zeros((b, t), dtype=bool)
        for i, ln in enumerate(lengths):
            data[i, :ln] = rng.normal(size=(ln, d))
            mask[i, :ln] = True
        mods[m] = ModalityInput(data=data, mask=mask)
    labels = {"m": rng.uniform(-1, 1, size=b)}
    if with_uni_labels:
        for key in ("t", "a", "v"):
            labels[key] = rng.uniform(-1, 1, size=b)
    return Batch(modalities=mods, labels=labels, ids=[f"s{i}" for i in range(b)])


ALL_MODELS = ["lf_dnn", "ef_lstm", "tfn", "lmf", "mfn", "mult", "misa",
              "mlf_dnn", "mtfn", "mlmf"]


class TestRegistry:
    def test_tfn_fusion_tensor_length(self):
        cfg = toy_config("tfn", hidden_dims={"text": 4, "audio": 3, "vision": 2})
        model = build_model(cfg)
        assert model.fusion_tensor_len == 5 * 4 * 3

    def test_same_seed_same_parameters(self):
        for name in ALL_MODELS:
            a = build_model(toy_config(name, seed=11))
            b = build_model(toy_config(name, seed=11))
            assert a.params.names() == b.params.names()
            for n in a.params.names():
                np.testing.assert_array_equal(a.params[n].data, b.params[n].data, err_msg=n)

    def test_different_seed_differs(self):
        a = build_model(toy_config("tfn", seed=1))
        b = build_model(toy_config("tfn", seed=2))
        assert any(not np.array_equal(a.params[n].data, b.params[n].data)
                   for n in a.params.names())

    def test_out_of_scope_models_say_why(self):
        with pytest.raises(ModelError, match="not implemented: requires pretrained backbone"):
            build_model(toy_config("bert_mag"))
        for name in ("graph_mfn", "mfm", "self_mm"):
            with pytest.raises(ModelError, match="not implemented"):
                build_model(toy_config(name))

    def test_unknown_model_lists_known(self):
        with pytest.raises(ModelError, match="tfn"):
            build_model(toy_config("transfusion"))

    def test_init_bound_follows_fan_in(self):
        cfg = toy_config("lf_dnn", hidden_dims={"text": 64, "audio": 64, "vision": 64},
                         feature_dims={"text": 100, "audio": 100, "vision": 100})
        model = build_model(cfg)
        w = model.params["enc.text.l1.w"].data
        bound = 1.0 / np.sqrt(100)
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > bound * 0.9  # actually fills the range


class TestForward:
    @pytest.mark.parametrize("name", ALL_MODELS)
    def test_shapes_and_finite(self, name):
        cfg = toy_config(name)
        model = build_model(cfg)
        batch = toy_batch(cfg, b=3)
        out = model_forward(model, batch)
        assert out.pred.shape == (3,)
        assert out.fusion_rep.ndim == 2 and out.fusion_rep.shape[0] == 3
        assert np.all(np.isfinite(out.pred.data))
        if name in ("mlf_dnn", "mtfn", "mlmf"):
            assert out.aux_preds is not None and len(out.aux_preds) == 3

    def test_zero_input_pred_equals_head_bias(self):
        cfg = toy_config("lf_dnn")
        model = build_model(cfg)
        for n in model.params.names():
            if n.endswith(".b"):
                model.params[n].data[...] = 0.0
        model.params["head.l2.b"].data[...] = 0.7
        mods = {m: ModalityInput(data=np.zeros((1, cfg.seq_lens[m], d), dtype=np.float32),
                                 mask=np.ones((1, cfg.seq_lens[m]), dtype=bool))
                for m, d in cfg.feature_dims.items()}
        out = model.forward(Batch(modalities=mods, labels={"m": np.zeros(1)}))
        np.testing.assert_allclose(out.pred.data, [0.7], rtol=1e-6)

    def test_mult_with_length_one_sequences(self):
        cfg = toy_config("mult", seq_lens={"text": 1, "audio": 1, "vision": 1})
        model = build_model(cfg)
        batch = toy_batch(cfg, b=2)
        out = model.forward(batch)
        assert out.pred.shape == (2,)
        assert np.all(np.isfinite(out.pred.data))

    def test_tfn_matches_staged_numpy_recomputation(self):
        cfg = toy_config("tfn", dtype="f64")
        model = build_model(cfg)
        batch = toy_batch(cfg, b=2)
        out = model.forward(batch)

        def relu(x):
            return np.maximum(x, 0)

        p = {n: model.params[n].data for n in model.params.names()}
        encs = []
        for m in model.modalities():
            mod = batch.modalities[m]
            counts = np.maximum(mod.mask.sum(1), 1)[:, None]
            pooled = (mod.data * mod.mask[:, :, None]).sum(1) / counts
            h = relu(pooled @ p[f"enc.{m}.l1.w"] + p[f"enc.{m}.l1.b"])
            encs.append(relu(h @ p[f"enc.{m}.l2.w"] + p[f"enc.{m}.l2.b"]))
        fused = []
        for i in range(2):
            vecs = [np.concatenate([[1.0], e[i]]) for e in encs]
            outer = np.einsum("i,j,k->ijk", *vecs).reshape(-1)
            fused.append(outer)
        fused = np.stack(fused)
        hidden = relu(fused @ p["post.l1.w"] + p["post.l1.b"])
        pred = hidden @ p["post.l2.w"] + p["post.l2.b"]
        np.testing.assert_allclose(out.pred.data, pred[:, 0], rtol=1e-10)
        np.testing.assert_allclose(out.fusion_rep.data, hidden, rtol=1e-10)

    @pytest.mark.parametrize("name", ["lf_dnn", "tfn", "lmf", "mfn", "mult", "misa"])
    def test_batch_permutation_permutes_preds(self, name):
        cfg = toy_config(name)
        model = build_model(cfg)
        batch = toy_batch(cfg, b=4)
        perm = np.array([2, 0, 3, 1])
        permuted = Batch(
            modalities={m: ModalityInput(v.data[perm], v.mask[perm])
                        for m, v in batch.modalities.items()},
            labels={k: v[perm] for k, v in batch.labels.items()},
        )
        base = model.forward(batch).pred.data
        swapped = model.forward(permuted).pred.data
        np.testing.assert_allclose(swapped, base[perm], rtol=1e-5, atol=1e-7)

    def test_eval_forward_is_deterministic(self):
        cfg = toy_config("misa", dropout=0.3)
        model = build_model(cfg)
        batch = toy_batch(cfg, b=3)
        a = model.forward(batch, train=False).pred.data
        b = model.forward(batch, train=False).pred.data
        assert a.tobytes() == b.tobytes()

    def test_train_dropout_changes_but_is_seeded(self):
        cfg = toy_config("lf_dnn", dropout=0.4)
        m1 = build_model(cfg)
        m2 = build_model(cfg)
        batch = toy_batch(cfg, b=3)
        out1 = m1.forward(batch, train=True).pred.data
        out2 = m2.forward(batch, train=True).pred.data
        np.testing.assert_array_equal(out1, out2)  # same seed, same dropout stream


class TestLmfEquivalence:
    def _contract(self, model, batch):
        out = model.forward(batch)
        uni = {m: out.uni_reps[m].data.astype(np.float64) for m in model.modalities()}
        full = lmf_full_tensor_expand(model)
        b = batch.size
        augmented = [np.concatenate([np.ones((b, 1)), uni[m]], axis=1)
                     for m in model.modalities()]
        letters = "ijk"[:len(augmented)]
        spec = ",".join(f"b{x}" for x in letters) + "," + letters + "o->bo"
        contraction = np.einsum(spec, *augmented, full)
        contraction += model.params["lmf.bias"].data.astype(np.float64)
        return out.fusion_rep.data, contraction

    def test_rank1_unit_dims(self):
        cfg = toy_config("lmf", lmf_rank=1, post_fusion_dim=1,
                         hidden_dims={"text": 1, "audio": 1, "vision": 1})
        model = build_model(cfg)
        full = lmf_full_tensor_expand(model)
        assert full.shape == (2, 2, 2, 1)
        fused, contraction = self._contract(model, toy_batch(cfg, b=2))
        np.testing.assert_allclose(fused, contraction, atol=1e-6)

    def test_rank2_is_sum_of_rank1_expansions(self):
        cfg = toy_config("lmf", lmf_rank=2)
        model = build_model(cfg)
        full = lmf_full_tensor_expand(model)
        mods = model.modalities()
        pieces = []
        for r in range(2):
            w = model.params["lmf.weights"].data[0, r].astype(np.float64)
            fs = [model.params[f"lmf.{m}.factor"].data[r].astype(np.float64) for m in mods]
            pieces.append(w * np.einsum("io,jo,ko->ijko", *fs))
        np.testing.assert_allclose(full, pieces[0] + pieces[1], rtol=1e-6)

    def test_random_dims_rank3_f32(self):
        cfg = toy_config("lmf", lmf_rank=3,
                         hidden_dims={"text": 2, "audio": 2, "vision": 3})
        model = build_model(cfg)
        fused, contraction = self._contract(model, toy_batch(cfg, b=3))
        np.testing.assert_allclose(fused, contraction, atol=1e-5)

    def test_rejects_non_lmf(self):
        with pytest.raises(ModelError):
            lmf_full_tensor_expand(build_model(toy_config("tfn")))


class TestMisa:
    def test_orthogonality_loss_zero_when_private_is_zero_map(self):
        cfg = toy_config("misa", misa_sim_weight=0.0, misa_orth_weight=1.0,
                         misa_recon_weight=0.0)
        model = build_model(cfg)
        for m in model.modalities():
            model.params[f"priv.{m}.w"].data[...] = 0.0
            model.params[f"priv.{m}.b"].data[...] = 0.0
        out = model.forward(toy_batch(cfg, b=3))
        np.testing.assert_allclose(out.aux_loss.data, 0.0, atol=1e-12)

    def test_aux_loss_scales_with_weights(self):
        cfg0 = toy_config("misa", misa_sim_weight=0.0, misa_orth_weight=0.0,
                          misa_recon_weight=0.0)
        out0 = build_model(cfg0).forward(toy_batch(cfg0, b=3))
        np.testing.assert_allclose(out0.aux_loss.data, 0.0, atol=1e-12)


class TestMultitask:
    def test_wrap_produces_three_aux_preds(self):
        cfg = toy_config("lf_dnn")
        model = multitask_wrap(build_model(cfg), uni_weight=0.5)
        out = model.forward(toy_batch(cfg, b=2))
        assert set(out.aux_preds) == {"text", "audio", "vision"}

    def test_zero_uni_weight_equals_base_task_loss(self):
        cfg = toy_config("lf_dnn")
        base = build_model(cfg)
        wrapped = multitask_wrap(build_model(cfg), uni_weight=0.0)
        batch = toy_batch(cfg, b=3)
        base_loss = base.loss(base.forward(batch), batch)
        total = wrapped.loss(wrapped.forward(batch), batch)
        np.testing.assert_allclose(total.data, base_loss.data, rtol=1e-7)

    def test_missing_unimodal_labels_is_explicit_error(self):
        cfg = toy_config("mtfn")
        model = build_model(cfg)
        batch = toy_batch(cfg, b=2, with_uni_labels=False)
        out = model.forward(batch)
        with pytest.raises(ModelError, match="unimodal labels"):
            model.loss(out, batch)

    def test_cannot_wrap_model_without_uni_reps(self):
        cfg = toy_config("ef_lstm")
        with pytest.raises(ModelError, match="unimodal representations"):
            multitask_wrap(build_model(cfg), uni_weight=1.0)

    def test_shared_encoder_gets_gradient_from_both_terms(self):
        cfg = toy_config("mlf_dnn", dtype="f64")
        model = build_model(cfg)
        batch = toy_batch(cfg, b=2)

        def run(uni_weight):
            model.uni_weight = uni_weight
            with Tape() as tape:
                loss = model.loss(model.forward(batch), batch)
            backward(tape, loss, model.params)
            return model.params["enc.text.l1.w"].grad.copy()

        g_task_only = run(0.0)
        g_both = run(1.0)
        assert not np.allclose(g_task_only, g_both)


class TestGradChecks:
    """End-to-end gradient checks on tiny f64 batches (dropout off)."""

    @pytest.mark.parametrize("name", ["lf_dnn", "lmf"])
    def test_fast_models(self, name):
        cfg = toy_config(name, dtype="f64",
                         feature_dims={"text": 2, "audio": 2, "vision": 2},
                         seq_lens={"text": 2, "audio": 2, "vision": 2},
                         hidden_dims={"text": 2, "audio": 2, "vision": 2},
                         post_fusion_dim=2)
        model = build_model(cfg)
        batch = toy_batch(cfg, b=2)

        def f(params):
            return model.loss(model.forward(batch), batch)

        report = grad_check(f, model.params)
        assert report.passed, repr(report)


class TestCheckpoints:
    def test_round_trip_reproduces_forward(self, tmp_path):
        cfg = toy_config("mtfn")
        model = build_model(cfg)
        batch = toy_batch(cfg, b=2)
        before = model.forward(batch).pred.data
        save_checkpoint(model, tmp_path / "ckpt", seed=cfg.seed)
        restored, manifest = load_checkpoint(tmp_path / "ckpt")
        assert manifest["model_name"] == "mtfn"
        after = restored.forward(batch).pred.data
        assert before.tobytes() == after.tobytes()

    def test_missing_checkpoint_errors(self, tmp_path):
        with pytest.raises(ModelError):
            load_checkpoint(tmp_path / "none")

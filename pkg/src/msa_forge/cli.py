"""Command-line entry point tying the pipeline together.

Subcommands::

    extract   run feature extraction over a dataset directory -> bundle
    train     multi-seed training of a registered model on a bundle
    eval      metrics + PCA projection (and optionally a tag-stratified
              robustness report) for a checkpoint on a bundle
    predict   single-sample forward pass with an STFT feature dump
    perturb   write a noise/missing-perturbed copy of a bundle
    report    render benchmark (table4) or robustness (table5) documents
              from run directories

Exit codes are stable per error class: 1 usage, 2 validation, 3 runtime.
Every subcommand is a thin adapter over the library; outputs are
byte-identical to direct library calls with the same arguments. The
environment variable MSA_FORGE_THREADS caps seed-level parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    compute_metrics,
    export_curves,
    export_projection_csv,
    make_benchmark_report,
    pca_project,
)
from .bundle import read_bundle, split_view, write_bundle
from .errors import MsaForgeError, UsageError, ValidationError
from .extractors import EmbeddingTable, ExtractorConfig, read_wav, run_dataset, stft, text_embed_lookup
from .models import Batch, ModalityInput, batch_from_bundle, load_checkpoint
from .robustness import (
    PerturbationSpec,
    evaluate_tagged,
    render_tagged_reports,
    tagged_report_from_dict,
)
from .trainer import get_config_regression, multi_seed_run

__all__ = ["main", "cli_main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_FMT = {"md": "markdown", "csv": "csv", "json": "json"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 natively; we reserve 2 for validation
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="msa-forge",
                     description="Multimodal sentiment analysis benchmark toolkit")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    p = sub.add_parser("extract", help="run feature extraction into a bundle")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--labels", required=True, help="label CSV (id,split,label_m,...)")
    p.add_argument("--config", required=True,
                   help="JSON: {modality: {kind, params}} extractor choices")
    p.add_argument("--out", required=True, help="bundle directory to write")
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--label-range", default="-3,3",
                   help="lo,hi (use the = form for negative values: --label-range=-3,3)")
    p.add_argument("--lenient", type=float, default=None, metavar="FRAC",
                   help="tolerate up to FRAC failed samples (default: strict)")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="multi-seed training run")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default=None, help="dataset tag for reports")
    p.add_argument("--config", default=None, help="JSON file of config overrides")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable (e.g. --set post_fusion_dim=32)")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--out", default="runs", help="run root directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a bundle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test", "all"])
    p.add_argument("--tagged", action="store_true",
                   help="also write a tag-stratified robustness report")
    p.add_argument("--snr-db", type=float, default=None,
                   help="with --tagged: synthesize a noise row at this SNR")
    p.add_argument("--drop", default=None, metavar="MODALITY",
                   help="with --tagged: synthesize a missing row for this modality")
    p.add_argument("--target", default="audio", metavar="MODALITY",
                   help="modality targeted by --snr-db (default audio)")
    p.add_argument("--seed", type=int, default=0, help="perturbation seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="single-sample prediction with STFT dump")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", default=None, help="WAV file (audio modality)")
    p.add_argument("--tokens", default=None, help="whitespace-separated tokens")
    p.add_argument("--embedding", default=None, help="embedding table file")
    p.add_argument("--visual-csv", default=None, help="per-frame visual feature CSV")
    p.add_argument("--config", default=None,
                   help="JSON: {modality: {kind, params}} extraction overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("perturb", help="write a perturbed copy of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--target", default=None, metavar="MODALITY",
                   help="modality receiving the noise")
    p.add_argument("--drop", default=None, metavar="MODALITY")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("report", help="render benchmark/robustness tables")
    p.add_argument("--runs", required=True, help="run root to scan")
    p.add_argument("--style", required=True, choices=["table4", "table5"])
    p.add_argument("--format", default="md", choices=sorted(_FMT))
    p.add_argument("--out", default=None, help="file to write (default: stdout only)")
    p.set_defaults(func=_cmd_report)

    return parser


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_extract(args) -> int:
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    configs = [ExtractorConfig(modality=m, kind=entry["kind"],
                               params=entry.get("params", {}))
               for m, entry in doc.items()]
    try:
        lo, hi = (float(x) for x in args.label_range.split(","))
    except ValueError:
        raise UsageError(f"--label-range must be lo,hi, got {args.label_range!r}") from None
    bundle = run_dataset(
        args.data, configs, args.labels,
        dataset_name=args.dataset_name,
        label_range=(lo, hi),
        strict=args.lenient is None,
        max_failure_fraction=args.lenient or 0.0,
    )
    write_bundle(bundle, args.out)
    print(json.dumps({"bundle": args.out, "n": bundle.n,
                      "modalities": sorted(bundle.blocks)}))
    return EXIT_OK


def _parse_set(pairs: list[str]) -> list[tuple[str, object]]:
    out = []
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set needs KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.append((key, value))
    return out


def _cmd_train(args) -> int:
    bundle = read_bundle(args.bundle)
    dataset = args.dataset or bundle.manifest.dataset_name
    config = get_config_regression(args.model, dataset)
    if args.config:
        for key, value in json.loads(Path(args.config).read_text(encoding="utf-8")).items():
            config[key] = value
    for key, value in _parse_set(args.set):
        try:
            config[key] = value
        except KeyError:
            raise UsageError(f"unknown config key {key!r}") from None
    if args.seeds:
        try:
            config.seeds = [int(s) for s in args.seeds.split(",") if s]
        except ValueError:
            raise UsageError(f"--seeds must be comma-separated ints, got {args.seeds!r}") from None
    result = multi_seed_run(config, bundle, out_root=args.out)
    print(json.dumps({"run_dir": result.run_dir, "seeds": result.seeds,
                      "metrics_mean": result.metrics_mean}))
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    bundle = read_bundle(args.bundle)
    view = bundle if args.split == "all" else split_view(bundle, args.split)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    batch = batch_from_bundle(view, dtype=model.dtype)
    output = model.forward(batch, train=False)
    preds = output.pred.data.astype(np.float64)
    metrics = compute_metrics(preds, view.labels(), strict_corr=False)
    (out_dir / "metrics.json").write_text(
        json.dumps({"model": manifest["model_name"], "split": args.split,
                    "metrics": metrics.as_dict()}, indent=2) + "\n", encoding="utf-8")

    proj = pca_project(output.fusion_rep.data.astype(np.float64),
                       k=min(3, view.n, output.fusion_rep.shape[1]))
    export_projection_csv(proj, view.ids, view.labels(), preds,
                          out_dir / "projection.csv")

    history = Path(args.checkpoint).parent / "history.jsonl"
    if history.exists():
        export_curves(history, out_dir / "curves.csv")

    written = {"metrics": str(out_dir / "metrics.json"),
               "projection": str(out_dir / "projection.csv")}
    if args.tagged:
        specs = []
        if args.snr_db is not None:
            specs.append(PerturbationSpec("feature_noise", args.target,
                                          snr_db=args.snr_db, seed=args.seed))
        if args.drop:
            specs.append(PerturbationSpec("modality_missing", args.drop, seed=args.seed))
        report = evaluate_tagged(model, view, specs or None)
        (out_dir / "tagged_report.json").write_text(
            json.dumps({"model": manifest["model_name"], "report": report.as_dict()},
                       indent=2) + "\n", encoding="utf-8")
        written["tagged_report"] = str(out_dir / "tagged_report.json")
    print(json.dumps({"metrics": metrics.as_dict(), "files": written}))
    return EXIT_OK


def _predict_feature_params(config_path, modality: str) -> dict:
    if not config_path:
        return {}
    doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
    return doc.get(modality, {}).get("params", {})


def _cmd_predict(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    dims = model.config.feature_dims
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mods: dict[str, ModalityInput] = {}
    stft_path = None

    if "audio" in dims:
        if not args.sample:
            raise ValidationError("checkpoint expects an audio modality; pass --sample WAV")
        params = _predict_feature_params(args.config, "audio")
        n_fft = int(params.get("n_fft", 512))
        hop = int(params.get("hop", 160))
        wave = read_wav(args.sample, expected_rate=params.get("sample_rate"))
        spec = stft(wave, n_fft, hop)
        stft_path = out_dir / "stft.csv"
        np.savetxt(stft_path, spec, delimiter=",", fmt="%.6g")
        from .extractors import mfcc
        d_a = dims["audio"]
        seq = mfcc(wave, n_fft=n_fft, hop=hop,
                   n_mels=int(params.get("n_mels", max(26, d_a))),
                   n_mfcc=int(params.get("n_mfcc", d_a)))
        if seq.shape[1] != d_a:
            raise ValidationError(
                f"audio features have dim {seq.shape[1]}, checkpoint expects {d_a}")
        mods["audio"] = ModalityInput(
            data=seq[None, ...].astype(model.dtype),
            mask=np.ones((1, seq.shape[0]), dtype=bool))

    if "text" in dims:
        if not args.tokens or not args.embedding:
            raise ValidationError(
                "checkpoint expects a text modality; pass --tokens and --embedding")
        table = EmbeddingTable.load(args.embedding)
        if table.dim != dims["text"]:
            raise ValidationError(
                f"embedding dim {table.dim} != checkpoint text dim {dims['text']}")
        seq = text_embed_lookup(args.tokens.split(), table)
        mods["text"] = ModalityInput(
            data=seq[None, ...].astype(model.dtype),
            mask=np.ones((1, seq.shape[0]), dtype=bool))

    if "vision" in dims:
        if args.visual_csv:
            from .extractors import ingest_visual_csv
            params = _predict_feature_params(args.config, "vision")
            seq = ingest_visual_csv(args.visual_csv, params.get("columns"))
            if seq.shape[1] != dims["vision"]:
                raise ValidationError(
                    f"visual features have dim {seq.shape[1]}, "
                    f"checkpoint expects {dims['vision']}")
            mods["vision"] = ModalityInput(
                data=seq[None, ...].astype(model.dtype),
                mask=np.ones((1, seq.shape[0]), dtype=bool))
        else:
            # treated as a missing modality: zero features, all-false mask
            mods["vision"] = ModalityInput(
                data=np.zeros((1, 1, dims["vision"]), dtype=model.dtype),
                mask=np.zeros((1, 1), dtype=bool))

    batch = Batch(modalities=mods, labels={"m": np.zeros(1)})
    output = model.forward(batch, train=False)
    fusion_path = out_dir / "fusion_rep.csv"
    np.savetxt(fusion_path, output.fusion_rep.data, delimiter=",", fmt="%.6g")
    result = {
        "pred": float(output.pred.data[0]),
        "fusion_rep_path": str(fusion_path),
        "stft_path": str(stft_path) if stft_path else None,
    }
    (out_dir / "prediction.json").write_text(json.dumps(result, indent=2) + "\n",
                                             encoding="utf-8")
    print(json.dumps(result))
    return EXIT_OK


def _cmd_perturb(args) -> int:
    bundle = read_bundle(args.bundle)
    if (args.snr_db is None) == (args.drop is None):
        raise UsageError("pass exactly one of --snr-db (with --target) or --drop")
    if args.snr_db is not None:
        if not args.target:
            raise UsageError("--snr-db needs --target MODALITY")
        spec = PerturbationSpec("feature_noise", args.target, snr_db=args.snr_db,
                                seed=args.seed)
    else:
        spec = PerturbationSpec("modality_missing", args.drop, seed=args.seed)
    from .robustness import apply_spec_to_bundle
    write_bundle(apply_spec_to_bundle(bundle, spec), args.out)
    print(json.dumps({"bundle": args.out, "kind": spec.kind, "modality": spec.modality}))
    return EXIT_OK


def _cmd_report(args) -> int:
    root = Path(args.runs)
    fmt = _FMT[args.format]
    if args.style == "table4":
        results: dict[str, dict[str, dict]] = {}
        for path in sorted(root.rglob("aggregate.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            metrics = {key: doc["metrics"][key]["mean"] for key in doc["metrics"]}
            results.setdefault(doc["model"], {})[doc["dataset"]] = metrics
        if not results:
            raise ValidationError(f"no aggregate.json found under {root}")
        text = make_benchmark_report(results, fmt=fmt)
    else:
        reports = {}
        for path in sorted(root.rglob("tagged_report.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            reports[doc["model"]] = tagged_report_from_dict(doc["report"])
        if not reports:
            raise ValidationError(f"no tagged_report.json found under {root}")
        text = render_tagged_reports(reports, fmt=fmt, avg="both")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="" if text.endswith("\n") else "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------

def cli_main(argv) -> int:
    """Dispatch argv (no program name) and map errors onto exit codes."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MsaForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> int:
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())

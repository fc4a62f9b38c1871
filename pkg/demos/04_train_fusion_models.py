"""Training fusion models: default configs, overrides, a multi-seed run,
and checkpoint reloading. Uses the synthetic dataset so it finishes in
about half a minute.
"""

from pathlib import Path

from msa_forge import get_config_regression, load_checkpoint, multi_seed_run
from msa_forge.synthetic import make_synthetic_bundle

OUT = Path("demo_output/training")
OUT.mkdir(parents=True, exist_ok=True)

bundle = make_synthetic_bundle(n_train=300, n_valid=60, n_test=60,
                               seq_len=12, feature_dim=6, seed=0)

# configs come fully populated and take dict-style overrides
config = get_config_regression("tfn", dataset_name="synthetic")
config["post_fusion_dim"] = 32
config["max_epochs"] = 12
config["patience"] = 12
config.seeds = [1111, 1112, 1113]
print(f"training {config.model.model_name} with post_fusion_dim="
      f"{config['post_fusion_dim']}, lr={config['lr']}, seeds={config.seeds}")

result = multi_seed_run(config, bundle, run_dir=OUT / "tfn_run")
print("\nper-seed test metrics:")
for run in result.per_seed:
    m = run.test_metrics
    print(f"  seed {run.seed}: acc2={m.acc2:.3f} f1={m.f1:.3f} "
          f"mae={m.mae:.3f} corr={m.corr:.3f} (best epoch {run.best_epoch})")
print(f"mean acc2 {result.metrics_mean['acc2']:.3f} "
      f"+- {result.metrics_std['acc2']:.3f} over {len(result.seeds)} seeds")

# every seed directory carries config.json, history.jsonl, checkpoint/, reps.bin
seed_dir = Path(result.run_dir) / f"seed_{result.seeds[0]}"
print(f"\nrun artifacts in {seed_dir.name}:",
      sorted(p.name for p in seed_dir.iterdir()))

# checkpoints restore bit-exactly
model, manifest = load_checkpoint(seed_dir / "checkpoint")
print(f"reloaded {manifest['model_name']} (seed {manifest['seed']}), "
      f"{model.params.num_values()} parameter values")

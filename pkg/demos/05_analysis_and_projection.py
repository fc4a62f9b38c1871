"""Metrics, benchmark tables, training-curve export, and PCA projection of
fusion representations.
"""

from pathlib import Path

import numpy as np

from msa_forge import compute_metrics, make_benchmark_report, pca_project
from msa_forge.analysis import export_curves, export_projection_csv
from msa_forge.models import read_named_arrays
from msa_forge.synthetic import make_synthetic_bundle
from msa_forge.trainer import get_config_regression, train_run

OUT = Path("demo_output/analysis")
OUT.mkdir(parents=True, exist_ok=True)

# --- the four benchmark metrics --------------------------------------------
rng = np.random.default_rng(0)
labels = rng.uniform(-3, 3, size=200)
preds = labels + rng.normal(0, 0.8, size=200)
rep = compute_metrics(preds, labels)
print(f"acc2={rep.acc2:.3f} f1={rep.f1:.3f} mae={rep.mae:.3f} corr={rep.corr:.3f}")

# --- benchmark grid rendering ------------------------------------------------
results = {
    "tfn": {"demo": rep},
    "lf_dnn": {"demo": compute_metrics(labels + rng.normal(0, 1.2, 200), labels)},
    "mlmf": {"demo": None},  # missing entries render as "-"
}
print("\n" + make_benchmark_report(results, fmt="markdown"))

# --- train one small model to get real curves and representations -----------
bundle = make_synthetic_bundle(n_train=200, n_valid=40, n_test=40,
                               seq_len=10, feature_dim=6, seed=1)
config = get_config_regression("lf_dnn", "synthetic")
config["max_epochs"] = 10
config["patience"] = 10
run = train_run(config, bundle, seed=1111, run_dir=OUT / "run")

export_curves(Path(run.run_dir) / "history.jsonl", OUT / "curves.csv")
print(f"curves.csv: epoch,loss,acc2,f1 for {len(run.history)} epochs")

# fusion representations captured on the test split -> 3-D projection
reps = read_named_arrays(Path(run.run_dir) / "reps.bin")
fusion = reps["fusion"].reshape(reps["fusion"].shape[-2], -1)
proj = pca_project(fusion.astype(np.float64), k=3)
print(f"explained variance: {proj.explained_variance.round(4)}")

test_ids = [s.id for s in bundle.manifest.samples if s.split == "test"]
test_labels = [s.label_m for s in bundle.manifest.samples if s.split == "test"]
export_projection_csv(proj, test_ids, test_labels,
                      reps["pred"].reshape(-1), OUT / "projection.csv")
print(f"projection.csv: id,x,y,z,label,pred for {len(test_ids)} samples "
      "(ready for any 3-D scatter tool)")

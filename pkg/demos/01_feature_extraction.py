"""Feature extraction walkthrough: WAV -> STFT/MFCC, utterance stats,
token embeddings, visual CSV ingestion, and a whole-dataset run.

Writes its scratch files under ./demo_output/extraction/.
"""

import csv
import json
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from msa_forge import (
    EmbeddingTable,
    ExtractorConfig,
    ingest_visual_csv,
    mfcc,
    read_wav,
    run_dataset,
    stft,
    text_embed_lookup,
    utterance_stats,
    write_bundle,
)

OUT = Path("demo_output/extraction")
OUT.mkdir(parents=True, exist_ok=True)
SR = 16000

# --- a synthetic "recording": two tones back to back --------------------
t = np.arange(SR) / SR
signal = np.where(t < 0.5,
                  0.6 * np.sin(2 * np.pi * 440 * t),
                  0.4 * np.sin(2 * np.pi * 880 * t))
scipy.io.wavfile.write(OUT / "tones.wav", SR, (signal * 32767).astype(np.int16))

wave = read_wav(OUT / "tones.wav")
print(f"loaded {len(wave.samples)} samples at {wave.sample_rate} Hz")

spec = stft(wave, n_fft=512, hop=160)
print(f"STFT: {spec.shape[0]} frames x {spec.shape[1]} bins")
peak_bins = spec.argmax(axis=1)
print(f"dominant bin moves from {peak_bins[0]} to {peak_bins[-1]} "
      f"({peak_bins[0] * SR / 512:.0f} Hz -> {peak_bins[-1] * SR / 512:.0f} Hz)")

cepstra = mfcc(wave, n_fft=512, hop=160, n_mels=26, n_mfcc=20)
print(f"MFCC sequence: {cepstra.shape} (frames x coefficients)")

# utterance-level statistics (mean/std/min/max per coefficient)
print(f"utterance stats vector: {utterance_stats(cepstra).shape}")

# --- static text embeddings ----------------------------------------------
emb_file = OUT / "embeddings.txt"
emb_file.write_text("<unk> 0.0 0.0 0.0\n"
                    "great 0.9 0.1 0.3\n"
                    "terrible -0.8 -0.2 0.1\n"
                    "movie 0.1 0.7 -0.2\n")
table = EmbeddingTable.load(emb_file)
tokens = "a great movie".split()
embedded = text_embed_lookup(tokens, table)
print(f"embedded {tokens} -> {embedded.shape}; OOV row equals <unk>: "
      f"{np.array_equal(embedded[0], table.vectors['<unk>'])}")

# --- visual features from a per-frame CSV --------------------------------
vis_file = OUT / "face.csv"
with open(vis_file, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["x_0", "x_1", "y_0", "y_1", "AU01_r", "AU12_r"])
    for frame in range(5):
        w.writerow([frame * 0.1, frame * 0.2, 0.5, 0.6, 0.0, frame * 0.05])
aus = ingest_visual_csv(vis_file, ["AU"])
both = ingest_visual_csv(vis_file, ["x_", "y_", "AU"])
print(f"AU columns only: {aus.shape}; landmarks+AUs: {both.shape}")

# --- whole-dataset extraction into a feature bundle ----------------------
data = OUT / "dataset"
data.mkdir(exist_ok=True)
(data / "emb.txt").write_text(emb_file.read_text())
rows = []
rng = np.random.default_rng(0)
for i in range(6):
    tt = np.arange(SR // 4) / SR
    tone = 0.5 * np.sin(2 * np.pi * (300 + 80 * i) * tt)
    scipy.io.wavfile.write(data / f"clip{i}.wav", SR, (tone * 32767).astype(np.int16))
    (data / f"clip{i}.txt").write_text(["great movie", "terrible movie"][i % 2])
    rows.append({"id": f"clip{i}", "split": ["train", "valid", "test"][i % 3],
                 "label_m": round(float(rng.uniform(-1, 1)), 3),
                 "audio_path": f"clip{i}.wav", "text_path": f"clip{i}.txt"})
with open(data / "labels.csv", "w", newline="") as fh:
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)

bundle = run_dataset(
    data,
    [ExtractorConfig("audio", "mfcc", {"n_fft": 256, "hop": 128,
                                       "n_mels": 12, "n_mfcc": 8}),
     ExtractorConfig("text", "glove", {"table": "emb.txt"})],
    data / "labels.csv",
    dataset_name="demo",
    label_range=(-1.0, 1.0),
)
write_bundle(bundle, OUT / "bundle")
print(f"bundle: {bundle.n} samples, modalities "
      f"{ {m: (b.max_len, b.feature_dim) for m, b in bundle.blocks.items()} }")
print(json.dumps({"written": str(OUT / 'bundle')}))

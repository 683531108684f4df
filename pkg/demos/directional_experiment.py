"""
Does the prefill help the generator?
====================================

Paired runs on the toy corpus: the same seed gives the same masks, batch
order and generator initialisation, so the only difference between the two
arms is the column:2 prefill. This is the experiment behind the directional
acceptance test; with the defaults below it takes roughly five
minutes per seed on one core.

    python demos/directional_experiment.py [n_seeds] [epochs]
"""

import sys
from pathlib import Path

from vitfill import TrainConfig, ingest_corpus
from vitfill.trainer import Dataset, evaluate, train
from vitfill.vit import ViTConfig

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 1
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 15

corpus = ingest_corpus(Path(__file__).resolve().parents[1] / "data" / "toy64", (64, 64), seed=0)
data = Dataset.from_corpus(corpus)

wins = 0
for seed in range(n_seeds):
    scores = {}
    for mode in ("none", "pretrain_scheme"):
        cfg = TrainConfig(seed=seed, vit_mode=mode, max_epochs=epochs, pretrain_epochs=epochs,
                          vit=ViTConfig("column:2"))
        ckpt, _ = train(data, cfg)
        scores[mode] = evaluate(data.ids["val"], data.images["val"], ckpt).aggregate()["mean_psnr_masked_db"]
    wins += scores["pretrain_scheme"] > scores["none"]
    print(f"seed {seed}: zero fill {scores['none']:.3f} dB, prefill {scores['pretrain_scheme']:.3f} dB")

print(f"prefill ahead in {wins} of {n_seeds} pairs")

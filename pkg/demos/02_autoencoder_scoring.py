"""Train a small autoencoder on the ledger and score every entry.

The network learns to reconstruct regular entries. Rare attribute values and
unseen pairings reconstruct badly, so the reconstruction error ranks them
high. The anomaly score blends that error with attribute rarity, and its
magnitude separates local from global anomalies.

Pass an epoch count to trade runtime for quality (default 60).
"""

import sys
from statistics import median

from ledgerlens.data import Label, build_vocabulary, one_hot_encode
from ledgerlens.metrics import format_table, recall100_operating_point
from ledgerlens.nn import LayerSpec, TrainConfig, reconstruction_error, train
from ledgerlens.scoring import score_population
from ledgerlens.synthgen import GeneratorConfig, generate

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60

cfg = GeneratorConfig.default()
entries = generate(cfg)
matrix = one_hot_encode(entries, build_vocabulary(entries, cfg.attribute_names))

spec = LayerSpec.from_name("AE3", matrix.dim)
params, trace = train(matrix, spec, TrainConfig(seed=1, max_epochs=epochs))
print(f"AE3 {spec.layer_sizes}: loss {trace.epoch_loss[0]:.3f} -> {trace.epoch_loss[-1]:.3f} "
      f"after {trace.n_epochs} epochs")

errors = reconstruction_error(params, spec, matrix.x)
_, report = recall100_operating_point(errors, matrix.labels)
print()
print(format_table([("AE3 reconstruction", report)]))

records = score_population(entries, errors, alpha=0.3)
for cls in (Label.GLOBAL, Label.LOCAL):
    shown = [r.AS for r, e in zip(records, entries) if e.label is cls]
    print(f"median anomaly score, {cls.value}: {median(shown):.3f}")

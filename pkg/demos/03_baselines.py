"""Compare PCA and LOF on the same one-hot matrix.

PCA scores an entry by its squared distance to the retained principal
subspace. LOF compares each entry's local reachability density with that of
its k nearest neighbours. Both are read at the recall-100% operating point:
the tightest threshold that still catches every injected anomaly.
"""

from ledgerlens.baselines import lof_scores, pca_fit, pca_score
from ledgerlens.data import build_vocabulary, one_hot_encode
from ledgerlens.metrics import format_table, recall100_operating_point
from ledgerlens.synthgen import GeneratorConfig, generate

cfg = GeneratorConfig.default()
entries = generate(cfg)
matrix = one_hot_encode(entries, build_vocabulary(entries, cfg.attribute_names))

rows = []
for c in (5, 10, 20, 30):
    scores = pca_score(pca_fit(matrix.x, c), matrix.x)
    rows.append((f"PCA(c={c})", recall100_operating_point(scores, matrix.labels)[1]))
for k in (10, 50):
    rows.append((f"LOF(k={k})", recall100_operating_point(lof_scores(matrix.x, k), matrix.labels)[1]))
print(format_table(rows))

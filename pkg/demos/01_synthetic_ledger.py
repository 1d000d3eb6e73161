"""Generate the default synthetic ledger and look at what was injected.

Regular entries follow company-driven dependency rules. Global anomalies
carry attribute values never seen among regular entries; local anomalies
combine individually common values in a pairing that never occurs.
"""

from collections import Counter

from ledgerlens.data import Label, build_vocabulary, one_hot_encode
from ledgerlens.synthgen import GeneratorConfig, generate

cfg = GeneratorConfig.default()
entries = generate(cfg)
print(f"{len(entries)} entries over attributes {list(cfg.attribute_names)}")
print("labels:", dict(Counter(e.label.value for e in entries)))

vocab = build_vocabulary(entries, cfg.attribute_names)
matrix = one_hot_encode(entries, vocab)
print(f"one-hot matrix {matrix.x.shape}, {int(matrix.x.sum(axis=1)[0])} hot columns per row")

for cls in (Label.GLOBAL, Label.LOCAL):
    print(f"\nfirst {cls.value} anomalies:")
    for e in [e for e in entries if e.label is cls][:3]:
        print("  ", e.entry_id, e.values)

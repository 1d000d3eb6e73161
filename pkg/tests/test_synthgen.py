import json
from collections import Counter

import numpy as np
import pytest

from ledgerlens.data import Label
from ledgerlens.errors import ConfigError
from ledgerlens.synthgen import (AttributeSpec, DependencyRule, GeneratorConfig, cooccurrence,
                                 generate, generate_regular, inject_global_anomalies,
                                 inject_local_anomalies, unseen_pairs)
from oracles import cooccurrence_count, value_counts


def _config(rules=True, **kw):
    attrs = [AttributeSpec("doc_type", 3, "DT"), AttributeSpec("account", 4, "ACC"),
             AttributeSpec("company", 3, "CC", 0.8)]
    rs = []
    if rules:
        rs = [DependencyRule("doc_type", "DT1", "account", {"ACC1": 0.9, "ACC2": 0.1}),
              DependencyRule("doc_type", "DT2", "account", {"ACC3": 1.0}),
              DependencyRule("doc_type", "DT3", "account", {"ACC3": 0.5, "ACC4": 0.5})]
    base = dict(n_regular=6000, n_global=10, n_local=10, seed=5, global_novel=1, local_breaks=1)
    base.update(kw)
    return GeneratorConfig(attrs, rs, **base)


def _regular_vocab(entries):
    reg = [e for e in entries if e.label is Label.REGULAR]
    return [{e.values[j] for e in reg} for j in range(len(reg[0].values))]


class TestConfig:
    def test_defaults_shape(self):
        cfg = GeneratorConfig.default()
        assert [a.cardinality for a in cfg.attributes] == [8, 5, 20, 12, 6, 30]
        assert cfg.dim == 81
        assert (cfg.n_regular, cfg.n_global, cfg.n_local) == (10000, 15, 15)

    def test_json_roundtrip(self, tmp_path):
        cfg = _config()
        p = tmp_path / "g.json"
        p.write_text(json.dumps(cfg.to_json()))
        assert GeneratorConfig.load(p) == cfg

    @pytest.mark.parametrize("change", [
        dict(n_global=40, n_local=40),
        dict(global_novel=0),
        dict(local_breaks=0),
        dict(seed=-1),
    ])
    def test_invalid(self, change):
        with pytest.raises(ConfigError):
            _config(**change)

    def test_invalid_rules(self):
        attrs = [AttributeSpec("a", 2, "A"), AttributeSpec("b", 2, "B")]
        with pytest.raises(ConfigError):
            GeneratorConfig([AttributeSpec("a", 1, "A")])
        with pytest.raises(ConfigError):
            GeneratorConfig(attrs, [DependencyRule("a", "A1", "b", {"B1": 0.5})])
        with pytest.raises(ConfigError):
            GeneratorConfig(attrs, [DependencyRule("a", "A9", "b", {"B1": 1.0})])
        with pytest.raises(ConfigError):
            GeneratorConfig(attrs, [DependencyRule("a", "A1", "b", {"B1": 1.0}),
                                    DependencyRule("b", "B1", "a", {"A1": 1.0})])

    def test_unreachable_value(self):
        attrs = [AttributeSpec("a", 2, "A"), AttributeSpec("b", 3, "B")]
        rules = [DependencyRule("a", "A1", "b", {"B1": 1.0}), DependencyRule("a", "A2", "b", {"B2": 1.0})]
        with pytest.raises(ConfigError, match="B3"):
            generate_regular(GeneratorConfig(attrs, rules, n_regular=100, n_global=0, n_local=0))

    def test_no_unseen_combination(self):
        attrs = [AttributeSpec("a", 2, "A", 1.0), AttributeSpec("b", 2, "B")]
        rules = [DependencyRule("a", "A1", "b", {"B1": 0.5, "B2": 0.5}),
                 DependencyRule("a", "A2", "b", {"B1": 0.5, "B2": 0.5})]
        cfg = GeneratorConfig(attrs, rules, n_regular=1000, n_global=0, n_local=2, local_breaks=1)
        with pytest.raises(ConfigError, match="conditional support"):
            generate(cfg)


class TestRegular:
    def test_conditional_frequency(self):
        entries = generate_regular(_config())
        dt1 = [e for e in entries if e.values[0] == "DT1"]
        share = sum(e.values[1] == "ACC1" for e in dt1) / len(dt1)
        assert abs(share - 0.9) <= 0.05

    def test_marginals_without_rules(self):
        cfg = _config(rules=False, n_regular=8000)
        entries = generate_regular(cfg)
        for j, a in enumerate(cfg.attributes):
            counts = value_counts(entries, j)
            freq = np.array([counts[v] for v in a.values]) / len(entries)
            assert np.all(np.abs(freq - a.profile()) <= 0.05)

    def test_every_value_appears(self):
        cfg = _config()
        entries = generate_regular(cfg)
        for j, a in enumerate(cfg.attributes):
            assert set(value_counts(entries, j)) == set(a.values)

    def test_deterministic(self):
        assert generate(_config()) == generate(_config())
        assert generate(_config()) != generate(_config(seed=6))


class TestInjection:
    def test_label_partition(self):
        cfg = _config()
        entries = generate(cfg)
        counts = Counter(e.label for e in entries)
        assert counts == {Label.REGULAR: 6000, Label.GLOBAL: 10, Label.LOCAL: 10}
        assert [e.entry_id for e in entries] == [str(i + 1) for i in range(len(entries))]

    def test_global_witness(self):
        for novel in (1, 2, 3):
            entries = generate(_config(global_novel=novel))
            vocab = _regular_vocab(entries)
            for e in entries:
                if e.label is Label.GLOBAL:
                    unseen = [v for j, v in enumerate(e.values) if v not in vocab[j]]
                    assert len(unseen) == novel

    def test_local_witness(self):
        entries = generate(_config())
        regular = [e for e in entries if e.label is Label.REGULAR]
        vocab = _regular_vocab(entries)
        for e in entries:
            if e.label is not Label.LOCAL:
                continue
            assert all(v in vocab[j] for j, v in enumerate(e.values))
            # brute-force scan of the rule-bound pair (doc_type, account)
            assert cooccurrence_count(regular, 0, e.values[0], 1, e.values[1]) == 0

    def test_local_witness_default_config(self):
        cfg = GeneratorConfig.default().replace(n_regular=3000, n_global=5, n_local=10)
        entries = generate(cfg)
        regular = [e for e in entries if e.label is Label.REGULAR]
        names = cfg.attribute_names
        bound = {(names.index(r.source), names.index(r.target)) for r in cfg.rules}
        vocab = _regular_vocab(entries)
        for e in entries:
            if e.label is Label.LOCAL:
                assert all(v in vocab[j] for j, v in enumerate(e.values))
                assert any(cooccurrence_count(regular, s, e.values[s], t, e.values[t]) == 0
                           for s, t in bound)

    def test_unseen_pair_helper(self):
        entries = generate_regular(_config())
        counts = cooccurrence(entries)
        # DT2 always books ACC3, so (DT2, ACC1) never co-occurs
        assert (0, 1) in unseen_pairs(("DT2", "ACC1", "CC1"), counts)
        assert (0, 1) not in unseen_pairs(("DT2", "ACC3", "CC1"), counts)

    def test_zero_injection_is_identity(self):
        cfg = _config(n_global=0, n_local=0)
        regular = generate_regular(cfg)
        assert inject_global_anomalies(regular, cfg) == regular
        assert inject_local_anomalies(regular, cfg) == regular
        assert generate(cfg) == regular

    def test_anomaly_share(self):
        cfg = GeneratorConfig.default()
        share = (cfg.n_global) / (cfg.n_regular + cfg.n_global + cfg.n_local)
        assert share == pytest.approx(0.0015, abs=1e-4)

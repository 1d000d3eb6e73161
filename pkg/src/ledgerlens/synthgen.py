"""Synthetic journal entries with attribute dependencies and injected anomalies.

Regular entries draw independent attributes from skewed (truncated geometric)
frequency profiles and dependent attributes from per-source-value conditional
distributions. Global anomalies carry at least one value that never occurs
among regular entries; local anomalies use only known values but at least one
rule-bound value pair that never co-occurs among regular entries.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import JournalEntry, Label
from .errors import ConfigError

MAX_RESAMPLES = 100
MAX_ANOMALY_FRACTION = 0.01


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    cardinality: int
    prefix: str
    skew: float = 0.6

    @property
    def values(self) -> tuple[str, ...]:
        return tuple(f"{self.prefix}{i + 1}" for i in range(self.cardinality))

    def profile(self) -> np.ndarray:
        p = self.skew ** np.arange(self.cardinality)
        return p / p.sum()


@dataclass(frozen=True)
class DependencyRule:
    """When ``source`` takes ``source_value``, draw ``target`` from ``distribution``."""

    source: str
    source_value: str
    target: str
    distribution: dict


@dataclass
class GeneratorConfig:
    attributes: list[AttributeSpec]
    rules: list[DependencyRule] = field(default_factory=list)
    n_regular: int = 10000
    n_global: int = 15
    n_local: int = 15
    seed: int = 0
    global_novel: int = 2   # never-seen values per global anomaly
    local_breaks: int = 2   # rule-bound pairs set to unseen combinations per local anomaly

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if not names:
            raise ConfigError("generator needs at least one attribute")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate attribute names: {names}")
        for a in self.attributes:
            if a.cardinality < 2:
                raise ConfigError(f"attribute {a.name!r}: cardinality must be >= 2")
            if not 0.0 < a.skew <= 1.0:
                raise ConfigError(f"attribute {a.name!r}: skew ratio must lie in (0, 1]")
        if self.n_regular < 1 or self.n_global < 0 or self.n_local < 0:
            raise ConfigError("entry counts must be non-negative (n_regular >= 1)")
        if self.n_global + self.n_local > MAX_ANOMALY_FRACTION * self.n_regular:
            raise ConfigError(f"{self.n_global + self.n_local} anomalies exceed "
                              f"{MAX_ANOMALY_FRACTION:.0%} of {self.n_regular} regular entries")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not 1 <= self.global_novel <= len(names):
            raise ConfigError(f"global_novel must lie in [1, {len(names)}], got {self.global_novel}")
        if self.local_breaks < 1:
            raise ConfigError(f"local_breaks must be >= 1, got {self.local_breaks}")
        by_name = self.attribute_map
        sources: dict[str, str] = {}
        for r in self.rules:
            if r.source not in by_name or r.target not in by_name:
                raise ConfigError(f"rule references unknown attribute: {r}")
            if r.source == r.target:
                raise ConfigError(f"rule maps {r.source!r} onto itself")
            if sources.setdefault(r.target, r.source) != r.source:
                raise ConfigError(f"attribute {r.target!r} depends on more than one source")
            if r.source_value not in by_name[r.source].values:
                raise ConfigError(f"rule source value {r.source_value!r} not in {r.source!r}")
            bad = set(r.distribution) - set(by_name[r.target].values)
            if bad:
                raise ConfigError(f"rule targets unknown values {sorted(bad)} of {r.target!r}")
            probs = np.array(list(r.distribution.values()), dtype=float)
            if (probs < 0).any() or not np.isclose(probs.sum(), 1.0):
                raise ConfigError(f"rule distribution for {r.source}={r.source_value} "
                                  f"must be non-negative and sum to 1")
        keys = [(r.target, r.source_value) for r in self.rules]
        if len(set(keys)) != len(keys):
            raise ConfigError("two rules share the same (source value, target)")
        self.order  # raises on cycles

    @property
    def attribute_map(self) -> dict[str, AttributeSpec]:
        return {a.name: a for a in self.attributes}

    @property
    def parents(self) -> dict[str, str]:
        return {r.target: r.source for r in self.rules}

    @property
    def order(self) -> list[int]:
        """Attribute indices with every rule source ahead of its targets."""
        names = [a.name for a in self.attributes]
        parents = self.parents
        done: list[str] = []
        pending = list(names)
        while pending:
            ready = [n for n in pending if parents.get(n) is None or parents[n] in done]
            if not ready:
                raise ConfigError(f"dependency rules form a cycle among {pending}")
            done.extend(ready)
            pending = [n for n in pending if n not in ready]
        return [names.index(n) for n in done]

    @property
    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def dim(self) -> int:
        return sum(a.cardinality for a in self.attributes)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_regular": self.n_regular,
            "n_global": self.n_global,
            "n_local": self.n_local,
            "global_novel": self.global_novel,
            "local_breaks": self.local_breaks,
            "attributes": [{"name": a.name, "cardinality": a.cardinality,
                            "prefix": a.prefix, "skew": a.skew} for a in self.attributes],
            "rules": [{"source": r.source, "source_value": r.source_value,
                       "target": r.target, "distribution": r.distribution} for r in self.rules],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GeneratorConfig":
        try:
            attrs = [AttributeSpec(a["name"], int(a["cardinality"]), a.get("prefix", a["name"]),
                                   float(a.get("skew", 0.6))) for a in doc["attributes"]]
            rules = [DependencyRule(r["source"], r["source_value"], r["target"],
                                    {str(k): float(v) for k, v in r["distribution"].items()})
                     for r in doc.get("rules", [])]
            return cls(attrs, rules, int(doc.get("n_regular", 10000)), int(doc.get("n_global", 15)),
                       int(doc.get("n_local", 15)), int(doc.get("seed", 0)),
                       int(doc.get("global_novel", 2)), int(doc.get("local_breaks", 2)))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed generator config: {exc!r}") from None

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read generator config: {exc}") from None
        return cls.from_json(doc)

    @classmethod
    def default(cls) -> "GeneratorConfig":
        text = resources.files("ledgerlens.resources").joinpath("default_generator.json").read_text("utf-8")
        return cls.from_json(json.loads(text))

    def replace(self, **changes) -> "GeneratorConfig":
        doc = self.to_json()
        doc.update(changes)
        return GeneratorConfig.from_json(doc)


class _Sampler:
    """Draws regular attribute rows as integer value indices."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.values = [a.values for a in config.attributes]
        index = {a.name: j for j, a in enumerate(config.attributes)}
        self.parent = [None] * len(config.attributes)
        # conditional[j][source value index] -> probability vector over values of j
        self.conditional: list[dict[int, np.ndarray]] = [dict() for _ in config.attributes]
        for r in config.rules:
            j, s = index[r.target], index[r.source]
            self.parent[j] = s
            probs = np.zeros(config.attributes[j].cardinality)
            for v, p in r.distribution.items():
                probs[self.values[j].index(v)] = p
            self.conditional[j][self.values[s].index(r.source_value)] = probs / probs.sum()
        self.profiles = [a.profile() for a in config.attributes]
        self.order = config.order

    def reachable(self, j: int) -> np.ndarray:
        s = self.parent[j]
        if s is None:
            return self.profiles[j] > 0
        mask = np.zeros(len(self.values[j]), dtype=bool)
        for sv in range(len(self.values[s])):
            mask |= self.conditional[j].get(sv, self.profiles[j]) > 0
        return mask

    def fill(self, rng: np.random.Generator, rows: np.ndarray, columns: Sequence[int]) -> None:
        """Sample ``columns`` of ``rows`` in dependency order, conditioning on parents."""
        n = rows.shape[0]
        for j in self.order:
            if j not in columns:
                continue
            s = self.parent[j]
            if s is None:
                rows[:, j] = rng.choice(len(self.values[j]), size=n, p=self.profiles[j])
                continue
            for sv in np.unique(rows[:, s]):
                sel = np.flatnonzero(rows[:, s] == sv)
                p = self.conditional[j].get(int(sv), self.profiles[j])
                rows[sel, j] = rng.choice(len(p), size=sel.size, p=p)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        rows = np.full((n, len(self.values)), -1, dtype=np.int64)
        self.fill(rng, rows, range(len(self.values)))
        return rows

    def descendants(self, j: int) -> list[int]:
        out, frontier = [], [j]
        while frontier:
            cur = frontier.pop()
            kids = [c for c, p in enumerate(self.parent) if p == cur]
            out.extend(kids)
            frontier.extend(kids)
        return out


def _stream(config: GeneratorConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, stream])


def generate_regular(config: GeneratorConfig) -> list[JournalEntry]:
    sampler = _Sampler(config)
    for j, a in enumerate(config.attributes):
        missing = np.flatnonzero(~sampler.reachable(j))
        if missing.size:
            raise ConfigError(f"unsatisfiable rules: values {[a.values[m] for m in missing]} of "
                              f"{a.name!r} can never be generated")
    rng = _stream(config, 0)
    for _ in range(MAX_RESAMPLES):
        rows = sampler.sample(rng, config.n_regular)
        if all(np.unique(rows[:, j]).size == len(v) for j, v in enumerate(sampler.values)):
            break
    else:
        raise ConfigError(f"not every configured value appeared in {MAX_RESAMPLES} draws of "
                          f"{config.n_regular} entries; raise n_regular or flatten the profiles")
    return [JournalEntry(str(i + 1), tuple(sampler.values[j][v] for j, v in enumerate(row)),
                         Label.REGULAR) for i, row in enumerate(rows)]


def _regular_vocab(entries: Sequence[JournalEntry]) -> list[set]:
    regular = [e for e in entries if e.label is Label.REGULAR]
    k = len(regular[0].values)
    return [{e.values[j] for e in regular} for j in range(k)]


def inject_global_anomalies(entries: list[JournalEntry], config: GeneratorConfig) -> list[JournalEntry]:
    """Append ``n_global`` entries that each carry ``global_novel`` never-seen values."""
    if config.n_global == 0:
        return list(entries)
    sampler = _Sampler(config)
    rng = _stream(config, 1)
    known = _regular_vocab(entries)
    k = len(config.attributes)
    rows = sampler.sample(rng, config.n_global)
    out = list(entries)
    novel_count = [0] * k
    for row in rows:
        values = [sampler.values[j][v] for j, v in enumerate(row)]
        for j in sorted(rng.choice(k, size=config.global_novel, replace=False)):
            while True:
                novel_count[j] += 1
                token = f"{config.attributes[j].prefix}X{novel_count[j]}"
                if token not in known[j]:
                    break
            values[j] = token
        out.append(JournalEntry(str(len(out) + 1), tuple(values), Label.GLOBAL))
    return out


def cooccurrence(entries: Sequence[JournalEntry]) -> Counter:
    """Counts of ``(j1, j2, v1, v2)`` value pairs for every attribute pair ``j1 < j2``."""
    counts: Counter = Counter()
    for e in entries:
        for (j1, v1), (j2, v2) in combinations(enumerate(e.values), 2):
            counts[j1, j2, v1, v2] += 1
    return counts


def unseen_pairs(values: Sequence[str], counts: Counter,
                 pairs: Sequence[tuple[int, int]] | None = None) -> list[tuple[int, int]]:
    """Attribute pairs of ``values`` whose joint value combination has zero count."""
    if pairs is None:
        pairs = list(combinations(range(len(values)), 2))
    return [(a, b) for a, b in pairs if counts[a, b, values[a], values[b]] == 0]


def inject_local_anomalies(entries: list[JournalEntry], config: GeneratorConfig) -> list[JournalEntry]:
    """Append ``n_local`` entries pairing known values in never-seen combinations.

    ``local_breaks`` disjoint rule-bound (source, target) pairs are each set to
    a source value and a target value that never co-occur among regular
    entries, chosen with probability proportional to the product of their
    individual frequencies; attributes downstream of them are resampled
    regularly.
    """
    if config.n_local == 0:
        return list(entries)
    sampler = _Sampler(config)
    names = config.attribute_names
    bound = sorted({(names.index(r.source), names.index(r.target)) for r in config.rules})
    if not bound:
        raise ConfigError("local anomalies need at least one dependency rule")
    regular = [e for e in entries if e.label is Label.REGULAR]
    counts = cooccurrence(regular)
    known = _regular_vocab(entries)

    candidates = []
    for s, t in bound:
        a, b = min(s, t), max(s, t)
        for vs in sorted(known[s]):
            for vt in sorted(known[t]):
                pair = (vs, vt) if s < t else (vt, vs)
                if counts[a, b, pair[0], pair[1]] == 0:
                    candidates.append((s, t, sampler.values[s].index(vs), sampler.values[t].index(vt)))
    if not candidates:
        raise ConfigError("every rule-bound value combination occurs among regular entries; "
                          "lower the conditional support of the dependency rules")

    # local anomalies combine individually frequent values: weight pairs by n(s) * n(t)
    value_counts = [Counter(e.values[j] for e in regular) for j in range(len(names))]
    weights = np.array([value_counts[s][sampler.values[s][vs]] * value_counts[t][sampler.values[t][vt]]
                        for s, t, vs, vt in candidates], dtype=np.float64)
    weights /= weights.sum()
    sorted_pairs = [(min(s, t), max(s, t)) for s, t in bound]
    cand_attrs = np.array([(s, t) for s, t, _, _ in candidates])
    rng = _stream(config, 2)
    out = list(entries)
    failures = 0
    while len(out) < len(entries) + config.n_local:
        row = sampler.sample(rng, 1)
        fixed: list[int] = []
        for _ in range(config.local_breaks):
            # each break uses a fresh attribute pair so earlier ones stay intact
            free = ~np.isin(cand_attrs, fixed).any(axis=1)
            if not free.any():
                break
            w = np.where(free, weights, 0.0)
            s, t, vs, vt = candidates[rng.choice(len(candidates), p=w / w.sum())]
            row[0, s], row[0, t] = vs, vt
            fixed += [s, t]
        else:
            failures = 0
        if len(fixed) < 2 * config.local_breaks:
            failures += 1
            if failures > MAX_RESAMPLES:
                raise ConfigError(f"cannot place {config.local_breaks} disjoint unseen value pairs "
                                  f"on the rule-bound attributes; lower local_breaks")
            continue
        redo = sorted({d for j in fixed for d in sampler.descendants(j)} - set(fixed))
        if redo:
            sampler.fill(rng, row, redo)
        values = tuple(sampler.values[j][v] for j, v in enumerate(row[0]))
        # exhaustive witness check before emitting
        if any(v not in known[j] for j, v in enumerate(values)):
            continue
        if not unseen_pairs(values, counts, sorted_pairs):
            continue
        out.append(JournalEntry(str(len(out) + 1), values, Label.LOCAL))
    return out


def generate(config: GeneratorConfig) -> list[JournalEntry]:
    """Regular entries followed by injected global, then local anomalies."""
    entries = generate_regular(config)
    entries = inject_global_anomalies(entries, config)
    return inject_local_anomalies(entries, config)

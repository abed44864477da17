"""Seeded synthetic multi-domain event logs with latent-intent ground truth.

Each user carries one hidden intent; each intent owns one disjoint slice of
every domain's item vocabulary. An event picks its domain from the
propensity weights, then its item from the user's intent cluster with
probability signal_strength (else uniformly from the whole vocabulary).
Per-user streams are derived from (seed, user_id), so output is
reproducible byte for byte and users could be generated in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .events import DatasetManifest, DomainSpec, intent_name
from .ingest import FIELD_ORDER

EVENTS_FILE = "events.ndjson"
MANIFEST_FILE = "manifest.json"
INTENTS_FILE = "intents.json"


@dataclass(frozen=True)
class GeneratorConfig:
    user_count: int = 1000
    domain_count: int = 2
    vocab_sizes: tuple[int, ...] = ()        # empty -> 1000 per domain
    intent_count: int = 8
    cluster_size: int = 0                    # items per intent cluster per domain; 0 -> vocab//K
    events_exponent: float = 1.5             # power-law tail of events per user
    events_max: int = 2000
    events_min: int = 2
    domain_propensity: tuple[float, ...] = ()  # empty -> uniform
    signal_strength: tuple[float, ...] = (0.9,)  # scalar broadcast or one rho per domain
    cat_cardinality: int = 8
    p_high_cluster: float = 0.7              # P(intent label "high" | item in cluster)
    p_high_noise: float = 0.2
    property_noise: float = 0.25
    seed: int = 0

    def resolved_vocab_sizes(self) -> tuple[int, ...]:
        if not self.vocab_sizes:
            return (1000,) * self.domain_count
        if len(self.vocab_sizes) == 1:
            return tuple(self.vocab_sizes) * self.domain_count
        return tuple(self.vocab_sizes)

    def resolved_propensity(self) -> np.ndarray:
        if not self.domain_propensity:
            return np.full(self.domain_count, 1.0 / self.domain_count)
        return np.asarray(self.domain_propensity, dtype=np.float64)

    def resolved_signal(self) -> tuple[float, ...]:
        rho = tuple(self.signal_strength)
        if len(rho) == 1:
            return rho * self.domain_count
        return rho

    def validate(self) -> None:
        if self.user_count < 1:
            raise ConfigError("user_count must be >= 1")
        if self.domain_count < 2:
            raise ConfigError("domain_count must be >= 2")
        vocab = self.resolved_vocab_sizes()
        if len(vocab) != self.domain_count:
            raise ConfigError("vocab_sizes must give one size (or one per domain)")
        if self.intent_count < 1:
            raise ConfigError("intent_count must be >= 1")
        for v in vocab:
            if v < self.intent_count:
                raise ConfigError(
                    f"vocabulary of size {v} cannot hold {self.intent_count} disjoint clusters"
                )
        for d, size in enumerate(self.cluster_sizes()):
            if size < 1 or size * self.intent_count > vocab[d]:
                raise ConfigError(f"cluster_size {size} does not fit domain {d}")
        prop = self.resolved_propensity()
        if len(prop) != self.domain_count or (prop < 0).any():
            raise ConfigError("domain_propensity needs one non-negative weight per domain")
        if abs(float(prop.sum()) - 1.0) > 1e-9:
            raise ConfigError("domain_propensity must sum to 1")
        rho = self.resolved_signal()
        if len(rho) != self.domain_count or any(not 0.0 <= r <= 1.0 for r in rho):
            raise ConfigError("signal_strength must be in [0, 1], scalar or one per domain")
        if not 1 < self.events_exponent:
            raise ConfigError("events_exponent must be > 1")
        if not 2 <= self.events_min <= self.events_max:
            raise ConfigError("need 2 <= events_min <= events_max")

    def cluster_sizes(self) -> tuple[int, ...]:
        vocab = self.resolved_vocab_sizes()
        if self.cluster_size:
            return (self.cluster_size,) * self.domain_count
        return tuple(v // self.intent_count for v in vocab)

    def manifest(self) -> DatasetManifest:
        vocab = self.resolved_vocab_sizes()
        return DatasetManifest(
            domains=tuple(
                DomainSpec(
                    index=d,
                    name=f"domain_{d}",
                    vocab_size=vocab[d],
                    cat_cardinalities=(self.cat_cardinality,),
                )
                for d in range(self.domain_count)
            )
        )


@dataclass(frozen=True)
class LatentIntent:
    index: int
    cluster_slices: tuple[tuple[int, int], ...]  # per domain (start, stop), disjoint across intents
    property_mean: float


def intent_table(config: GeneratorConfig) -> tuple[LatentIntent, ...]:
    sizes = config.cluster_sizes()
    return tuple(
        LatentIntent(
            index=k,
            cluster_slices=tuple((k * s, (k + 1) * s) for s in sizes),
            property_mean=float(k),
        )
        for k in range(config.intent_count)
    )


def _event_count(rng: np.random.Generator, config: GeneratorConfig) -> int:
    """Bounded power-law draw via inverse CDF, pdf proportional to x^-exponent."""
    lo, hi, a = float(config.events_min), float(config.events_max), config.events_exponent
    u = rng.random()
    tail = 1.0 - a
    x = (lo**tail + u * (hi**tail - lo**tail)) ** (1.0 / tail)
    return int(min(max(int(x), config.events_min), config.events_max))


def _user_events(
    user_id: int,
    config: GeneratorConfig,
    intents: tuple[LatentIntent, ...],
    vocab: tuple[int, ...],
    propensity: np.ndarray,
    rho: tuple[float, ...],
) -> tuple[int, list[dict]]:
    rng = np.random.default_rng([config.seed, user_id])
    intent = intents[int(rng.integers(0, config.intent_count))]
    n = _event_count(rng, config)
    ts = int(rng.integers(0, 1_000_000))
    rows = []
    for _ in range(n):
        ts += int(rng.integers(1, 600_000))
        d = int(rng.choice(config.domain_count, p=propensity))
        lo, hi = intent.cluster_slices[d]
        in_cluster = rng.random() < rho[d]
        item = int(rng.integers(lo, hi)) if in_cluster else int(rng.integers(0, vocab[d]))
        hit = lo <= item < hi  # uniform draws can land in the cluster too
        p_high = config.p_high_cluster if hit else config.p_high_noise
        prop = intent.property_mean + rng.normal(0.0, config.property_noise)
        rows.append(
            {
                "user_id": user_id,
                "domain": f"domain_{d}",
                "item_id": item,
                "ts_ms": ts,
                "intent": intent_name(int(rng.random() < p_high)),
                "cats": [item % config.cat_cardinality],
                "prop": round(float(prop), 6),
            }
        )
    return intent.index, rows


def generate_dataset(config: GeneratorConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write events.ndjson, manifest.json, intents.json; return their paths."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    intents = intent_table(config)
    vocab = config.resolved_vocab_sizes()
    propensity = config.resolved_propensity()
    rho = config.resolved_signal()

    assigned: dict[int, int] = {}
    events_path = out / EVENTS_FILE
    with open(events_path, "w", encoding="utf-8", newline="\n") as fh:
        for user_id in range(config.user_count):
            intent_idx, rows = _user_events(user_id, config, intents, vocab, propensity, rho)
            assigned[user_id] = intent_idx
            for row in rows:
                assert tuple(row.keys()) == FIELD_ORDER
                fh.write(json.dumps(row, separators=(", ", ": ")) + "\n")

    manifest_path = out / MANIFEST_FILE
    manifest_path.write_text(config.manifest().to_json(), encoding="utf-8")

    intents_path = out / INTENTS_FILE
    intents_path.write_text(
        json.dumps({str(u): k for u, k in sorted(assigned.items())}, indent=2, sort_keys=False)
        + "\n",
        encoding="utf-8",
    )
    return {"events": events_path, "manifest": manifest_path, "intents": intents_path}


def load_intents(path: str | Path) -> dict[int, int]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return {int(u): int(k) for u, k in raw.items()}
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed intent file: {exc}") from exc

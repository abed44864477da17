"""Event schema and the dataset manifest.

A manifest declares the domains of a corpus: dense indices, names, item
vocabulary sizes, and the per-slot cardinalities of each domain's
categorical features. Event logs are validated against it at ingest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DataError

INTENT_LOW = 0
INTENT_HIGH = 1

_INTENT_NAMES = {"low": INTENT_LOW, "high": INTENT_HIGH}


@dataclass(frozen=True)
class DomainSpec:
    index: int
    name: str
    vocab_size: int
    cat_cardinalities: tuple[int, ...] = ()

    @property
    def cat_arity(self) -> int:
        return len(self.cat_cardinalities)


@dataclass(frozen=True)
class DatasetManifest:
    domains: tuple[DomainSpec, ...]

    def __post_init__(self):
        names = [d.name for d in self.domains]
        if len(self.domains) < 2:
            raise DataError("manifest needs at least 2 domains")
        if [d.index for d in self.domains] != list(range(len(self.domains))):
            raise DataError("domain indices must be dense 0..|D|-1 in order")
        if len(set(names)) != len(names):
            raise DataError("duplicate domain name in manifest")
        for d in self.domains:
            if d.vocab_size < 1:
                raise DataError(f"domain {d.name!r} has empty vocabulary")

    @property
    def domain_count(self) -> int:
        return len(self.domains)

    def by_name(self, name: str) -> DomainSpec:
        for d in self.domains:
            if d.name == name:
                return d
        raise DataError(f"unknown domain {name!r}")

    def to_json(self) -> str:
        payload = {
            "domains": [
                {
                    "index": d.index,
                    "name": d.name,
                    "vocab_size": d.vocab_size,
                    "cat_cardinalities": list(d.cat_cardinalities),
                }
                for d in self.domains
            ]
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            payload = json.loads(text)
            domains = tuple(
                DomainSpec(
                    index=int(d["index"]),
                    name=str(d["name"]),
                    vocab_size=int(d["vocab_size"]),
                    cat_cardinalities=tuple(int(c) for c in d["cat_cardinalities"]),
                )
                for d in payload["domains"]
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        return cls(domains=domains)


@dataclass(frozen=True)
class Event:
    domain: int
    item_id: int
    ts_ms: int
    intent: int  # INTENT_HIGH or INTENT_LOW
    cats: tuple[int, ...] = ()
    prop: float = 0.0


@dataclass
class StitchedSequence:
    user_id: int
    events: list[Event] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class TrainingExample:
    user_id: int
    context: list[Event]
    label: Event


def intent_from_name(name: str) -> int:
    try:
        return _INTENT_NAMES[name]
    except KeyError:
        raise DataError(f"intent must be 'high' or 'low', got {name!r}") from None


def intent_name(code: int) -> str:
    return "high" if code == INTENT_HIGH else "low"

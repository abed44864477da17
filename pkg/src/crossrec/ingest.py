"""Event log ingestion.

The log is newline-delimited JSON, one event per line, with exactly these
fields in this order: user_id, domain, item_id, ts_ms, intent, cats, prop.
Unknown or reordered fields are rejected. Each bad line is reported with
its 1-based line number; the run fails when the bad-line rate exceeds
`error_threshold` (default 0: any error is fatal).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import DataError
from .events import DatasetManifest, Event, intent_from_name

FIELD_ORDER = ("user_id", "domain", "item_id", "ts_ms", "intent", "cats", "prop")


def _parse_line(obj: dict, manifest: DatasetManifest) -> tuple[int, Event]:
    if not isinstance(obj, dict) or tuple(obj.keys()) != FIELD_ORDER:
        raise DataError(f"fields must be exactly {list(FIELD_ORDER)} in order")
    user_id = obj["user_id"]
    if not isinstance(user_id, int) or isinstance(user_id, bool) or user_id < 0:
        raise DataError("user_id must be a non-negative integer")
    spec = manifest.by_name(str(obj["domain"]))
    item_id = obj["item_id"]
    if not isinstance(item_id, int) or isinstance(item_id, bool):
        raise DataError("item_id must be an integer")
    if not 0 <= item_id < spec.vocab_size:
        raise DataError(
            f"item_id {item_id} out of vocabulary for domain {spec.name!r} (size {spec.vocab_size})"
        )
    ts_ms = obj["ts_ms"]
    if not isinstance(ts_ms, int) or isinstance(ts_ms, bool) or ts_ms < 0:
        raise DataError("ts_ms must be a non-negative integer")
    intent = intent_from_name(obj["intent"])
    cats = obj["cats"]
    if not isinstance(cats, list) or len(cats) != spec.cat_arity:
        raise DataError(f"cats must be a list of {spec.cat_arity} integers for domain {spec.name!r}")
    for slot, (value, card) in enumerate(zip(cats, spec.cat_cardinalities)):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < card:
            raise DataError(f"cats[{slot}] must be an integer in [0, {card})")
    prop = obj["prop"]
    if isinstance(prop, bool) or not isinstance(prop, (int, float)) or not math.isfinite(prop):
        raise DataError("prop must be a finite real")
    return user_id, Event(
        domain=spec.index,
        item_id=item_id,
        ts_ms=ts_ms,
        intent=intent,
        cats=tuple(cats),
        prop=float(prop),
    )


def ingest_events(
    path: str | Path,
    manifest: DatasetManifest,
    error_threshold: float = 0.0,
) -> dict[int, dict[int, list[Event]]]:
    """Group log events by user and domain; domain lists sorted by (ts_ms, item_id).

    Returns {user_id: {domain_index: [Event, ...]}}.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"event log not found: {path}")

    out: dict[int, dict[int, list[Event]]] = {}
    errors: list[str] = []
    total = 0
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read event log {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"malformed record: {exc.msg}") from None
                user_id, event = _parse_line(obj, manifest)
            except DataError as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            out.setdefault(user_id, {}).setdefault(event.domain, []).append(event)

    if errors and total and len(errors) / total > error_threshold:
        shown = "; ".join(errors[:5])
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        raise DataError(
            f"{len(errors)}/{total} bad records exceeds threshold {error_threshold}: {shown}{more}"
        )

    for domains in out.values():
        for events in domains.values():
            events.sort(key=lambda e: (e.ts_ms, e.item_id))
    return out

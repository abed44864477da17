"""Per-user sequence pipeline: stitch, trim, window, batch.

Per-domain histories are merged into one time-ordered sequence, trimmed to
a cap that sacrifices the oldest low-intent events first, partitioned into
disjoint windows whose last event is the training label, and padded into
rectangular batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import DatasetManifest, Event, StitchedSequence, TrainingExample

SEQUENCE_CAP = 5000
WINDOW_LEN = 800


def stitch(user_id: int, per_domain: dict[int, list[Event]]) -> StitchedSequence:
    """Merge per-domain event lists by (ts_ms, domain, item_id); stable for duplicates."""
    events = [e for _, lst in sorted(per_domain.items()) for e in lst]
    events.sort(key=lambda e: (e.ts_ms, e.domain, e.item_id))
    return StitchedSequence(user_id=user_id, events=events)


def trim_to_cap(seq: StitchedSequence, cap: int = SEQUENCE_CAP) -> StitchedSequence:
    """Drop oldest low-intent events first until len <= cap; order preserved."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    excess = len(seq.events) - cap
    if excess <= 0:
        return seq
    drop: set[int] = set()
    for i, e in enumerate(seq.events):  # sequence order is time order
        if len(drop) == excess:
            break
        if e.intent == 0:
            drop.add(i)
    if len(drop) < excess:
        for i, e in enumerate(seq.events):
            if len(drop) == excess:
                break
            if i not in drop:
                drop.add(i)
    kept = [e for i, e in enumerate(seq.events) if i not in drop]
    return StitchedSequence(user_id=seq.user_id, events=kept)


def slide_windows(seq: StitchedSequence, window_len: int = WINDOW_LEN) -> list[TrainingExample]:
    """Partition into disjoint chunks of window_len; each chunk's last event is the label.

    Chunks shorter than 2 are dropped (no context/label split possible).
    """
    if window_len < 2:
        raise ValueError("window_len must be >= 2")
    out = []
    events = seq.events
    for start in range(0, len(events), window_len):
        chunk = events[start : start + window_len]
        if len(chunk) < 2:
            continue
        out.append(TrainingExample(user_id=seq.user_id, context=chunk[:-1], label=chunk[-1]))
    return out


@dataclass
class Batch:
    """Rectangular arrays over B examples padded to the longest context M.

    Pad slots have real=False, domain=|D| (the pad sentinel), item=pad_id,
    cats=-1 and zeros elsewhere. cats is (B, M, S_max) with -1 in unused
    slots; positions count 0..len-1 within each context.
    """

    user_id: np.ndarray   # (B,) int64
    real: np.ndarray      # (B, M) bool
    domain: np.ndarray    # (B, M) int64
    item: np.ndarray      # (B, M) int64
    cats: np.ndarray      # (B, M, S_max) int64
    prop: np.ndarray      # (B, M) float64
    ts_ms: np.ndarray     # (B, M) int64
    intent: np.ndarray    # (B, M) int64
    positions: np.ndarray # (B, M) int64
    lengths: np.ndarray   # (B,) int64
    label_domain: np.ndarray  # (B,) int64
    label_item: np.ndarray    # (B,) int64
    label_cats: np.ndarray    # (B, S_max) int64
    label_prop: np.ndarray    # (B,) float64
    label_intent: np.ndarray  # (B,) int64

    @property
    def size(self) -> int:
        return self.real.shape[0]

    @property
    def max_len(self) -> int:
        return self.real.shape[1]


def assemble_batch(
    examples: list[TrainingExample],
    manifest: DatasetManifest,
    pad_id: int = 0,
) -> Batch:
    if not examples:
        raise ValueError("batch must be non-empty")
    b = len(examples)
    m = max(len(ex.context) for ex in examples)
    s_max = max((d.cat_arity for d in manifest.domains), default=0)
    pad_domain = manifest.domain_count

    batch = Batch(
        user_id=np.zeros(b, np.int64),
        real=np.zeros((b, m), bool),
        domain=np.full((b, m), pad_domain, np.int64),
        item=np.full((b, m), pad_id, np.int64),
        cats=np.full((b, m, s_max), -1, np.int64),
        prop=np.zeros((b, m)),
        ts_ms=np.zeros((b, m), np.int64),
        intent=np.zeros((b, m), np.int64),
        positions=np.zeros((b, m), np.int64),
        lengths=np.zeros(b, np.int64),
        label_domain=np.zeros(b, np.int64),
        label_item=np.zeros(b, np.int64),
        label_cats=np.full((b, s_max), -1, np.int64),
        label_prop=np.zeros(b),
        label_intent=np.zeros(b, np.int64),
    )
    for i, ex in enumerate(examples):
        n = len(ex.context)
        batch.user_id[i] = ex.user_id
        batch.lengths[i] = n
        batch.real[i, :n] = True
        batch.positions[i, :n] = np.arange(n)
        for j, e in enumerate(ex.context):
            batch.domain[i, j] = e.domain
            batch.item[i, j] = e.item_id
            batch.cats[i, j, : len(e.cats)] = e.cats
            batch.prop[i, j] = e.prop
            batch.ts_ms[i, j] = e.ts_ms
            batch.intent[i, j] = e.intent
        lab = ex.label
        batch.label_domain[i] = lab.domain
        batch.label_item[i] = lab.item_id
        batch.label_cats[i, : len(lab.cats)] = lab.cats
        batch.label_prop[i] = lab.prop
        batch.label_intent[i] = lab.intent
    return batch


def build_examples(
    per_user: dict[int, dict[int, list[Event]]],
    cap: int = SEQUENCE_CAP,
    window_len: int = WINDOW_LEN,
) -> dict[int, list[TrainingExample]]:
    """Ingested map -> per-user training examples, users in sorted id order."""
    out: dict[int, list[TrainingExample]] = {}
    for user_id in sorted(per_user):
        seq = trim_to_cap(stitch(user_id, per_user[user_id]), cap)
        windows = slide_windows(seq, window_len)
        if windows:
            out[user_id] = windows
    return out


def split_train_test(
    per_user_examples: dict[int, list[TrainingExample]],
) -> tuple[list[TrainingExample], list[TrainingExample]]:
    """Each user's final window is held out for evaluation; the rest train.

    Users with a single window contribute to the test side only.
    """
    train: list[TrainingExample] = []
    test: list[TrainingExample] = []
    for user_id in sorted(per_user_examples):
        windows = per_user_examples[user_id]
        train.extend(windows[:-1])
        test.append(windows[-1])
    return train, test

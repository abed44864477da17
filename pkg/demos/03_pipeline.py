"""From raw per-domain logs to padded training batches.

Stitching merges each user's per-domain streams into one time-ordered
sequence (ties break by domain index, then item id). Long histories drop
oldest low-intent events first; windows partition what remains.
"""

import numpy as np

from crossrec.events import DatasetManifest, DomainSpec, Event
from crossrec.pipeline import assemble_batch, slide_windows, stitch, trim_to_cap

manifest = DatasetManifest(domains=(
    DomainSpec(0, "video", 100, (5,)),
    DomainSpec(1, "lens", 80, (3,)),
))

per_domain = {
    0: [Event(0, 11, ts_ms=100, intent=1, cats=(2,), prop=0.5),
        Event(0, 12, ts_ms=300, intent=0, cats=(1,), prop=0.1)],
    1: [Event(1, 7, ts_ms=200, intent=0, cats=(0,), prop=0.2),
        Event(1, 8, ts_ms=300, intent=1, cats=(2,), prop=0.9)],
}
seq = stitch(user_id=3, per_domain=per_domain)
print("stitched order:", [(e.ts_ms, e.domain, e.item_id) for e in seq.events])
# ts 300 tie resolves by domain index: video(0) item 12 before lens(1) item 8

# cap at 3: the oldest low-intent event goes first, high-intent survives
trimmed = trim_to_cap(seq, cap=3)
print("after cap 3:", [(e.item_id, e.intent) for e in trimmed.events])

# windows partition the sequence; each window's last event is the label
long_seq = stitch(9, {0: [Event(0, i, ts_ms=i, intent=0, cats=(0,), prop=0.0)
                          for i in range(11)]})
examples = slide_windows(long_seq, window_len=4)
for ex in examples:
    print(f"context {[e.item_id for e in ex.context]} -> label {ex.label.item_id}")
# 11 = 4 + 4 + 3; every event lands in exactly one window

batch = assemble_batch(examples, manifest)
print("batch shape:", batch.item.shape, "real rows per example:", batch.real.sum(axis=1))
print("pad rows use the domain sentinel:", np.unique(batch.domain[~batch.real]))

"""Turning replay-buffer world models into compact proposal contexts.

lake     aligned 4x4 minimaps with at least 8 revealed cells, 5 sampled
crafter  revealed bounding box tiled into 15x15 minimaps (>= 3 overlap), 5 sampled
cube     corner tokens of not-yet-shown states, failures first
"""
from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from ..patterns import CORNER_NAMES
from ..world import VALUE_DOMAINS, WorldModel
from .buffer import ReplayBuffer

log = logging.getLogger(__name__)

LAKE_MIN_REVEALED = 8
MINIMAPS_PER_PROPOSAL = 5
CRAFTER_TILE = 15
CRAFTER_MIN_OVERLAP = 3
CUBE_MAX_EXAMPLES = 10
UNKNOWN_LABEL = {"lake": "UNKNOWN", "crafter": "unknown"}


@dataclass
class ProposalContext:
    domain: str
    examples: list[dict]
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"domain": self.domain, "examples": self.examples, "summary": self.summary}


def tile_starts(length: int, tile: int = CRAFTER_TILE, min_overlap: int = CRAFTER_MIN_OVERLAP) -> list[int]:
    """Start offsets of the fewest tiles covering ``length`` with every overlap
    at least ``min_overlap`` and the largest overlap as small as possible."""
    if length <= tile:
        return [0]
    n = math.ceil((length - min_overlap) / (tile - min_overlap))
    spare = n * tile - length
    base, extra = divmod(spare, n - 1)
    starts = [0]
    for i in range(n - 1):
        starts.append(starts[-1] + tile - (base + (1 if i < extra else 0)))
    return starts


def _grid_labels(world: WorldModel, r0: int, r1: int, c0: int, c1: int) -> list[list[str]]:
    values = VALUE_DOMAINS[world.domain]
    unknown = UNKNOWN_LABEL[world.domain]
    cols = world.layout.cols
    out = []
    for r in range(r0, r1):
        row = []
        for c in range(c0, c1):
            v = world.get(r * cols + c)
            row.append(unknown if v is None else values.name(v))
        out.append(row)
    return out


def lake_minimaps(world: WorldModel, min_revealed: int = LAKE_MIN_REVEALED) -> list[list[list[str]]]:
    lay = world.layout
    out = []
    for br in range(0, lay.rows, 4):
        for bc in range(0, lay.cols, 4):
            n = sum(
                lay.index(br + dr, bc + dc) in world.revealed for dr in range(4) for dc in range(4)
            )
            if n >= min_revealed:
                out.append(_grid_labels(world, br, br + 4, bc, bc + 4))
    return out


def crafter_minimaps(world: WorldModel, episode_id: int = 0) -> list[dict]:
    if not world.revealed:
        return []
    cols = world.layout.cols
    rs = [u // cols for u in world.revealed]
    cs = [u % cols for u in world.revealed]
    rmin, rmax, cmin, cmax = min(rs), max(rs) + 1, min(cs), max(cs) + 1
    out = []
    for dr in tile_starts(rmax - rmin):
        for dc in tile_starts(cmax - cmin):
            r0, c0 = rmin + dr, cmin + dc
            r1, c1 = min(r0 + CRAFTER_TILE, rmax), min(c0 + CRAFTER_TILE, cmax)
            out.append({
                "episode_id": episode_id,
                "bbox": {"xmin": c0, "xmax": c1, "ymin": r0, "ymax": r1},
                "grid": _grid_labels(world, r0, r1, c0, c1),
            })
    return out


def extract_proposal_context(buffer: ReplayBuffer, domain: str, rng_seed=0,
                             n_minimaps: int = MINIMAPS_PER_PROPOSAL,
                             max_examples: int = CUBE_MAX_EXAMPLES) -> Optional[ProposalContext]:
    """Build the payload for one proposal round, or None when nothing qualifies."""
    if not len(buffer):
        raise ValueError("proposal context needs a nonempty replay buffer")
    rng = random.Random(rng_seed)
    if domain == "lake":
        pool = [{"episode_id": e.episode_id, "grid": g} for e in buffer for g in lake_minimaps(e.world)]
        if not pool:
            log.info("proposal skipped: no minimap has %d revealed cells", LAKE_MIN_REVEALED)
            return None
        return ProposalContext(domain, rng.sample(pool, min(n_minimaps, len(pool))))
    if domain == "crafter":
        pool = [m for e in buffer for m in crafter_minimaps(e.world, e.episode_id)]
        if not pool:
            log.info("proposal skipped: no revealed region")
            return None
        return ProposalContext(domain, rng.sample(pool, min(n_minimaps, len(pool))))
    if domain == "cube":
        from ..envs.cube import corner_token

        fresh = [e for e in buffer if not e.reflected]
        chosen = [e for e in fresh if not e.success][:max_examples]
        if len(chosen) < max_examples:
            chosen += [e for e in fresh if e.success][: max_examples - len(chosen)]
        if not chosen:
            log.info("proposal skipped: every buffered state was already reflected")
            return None
        examples, summary = [], Counter()
        for e in chosen:
            e.reflected = True
            corners = {name: corner_token(e.world, name) for name in CORNER_NAMES}
            examples.append({"episode_id": e.episode_id, "success": e.success, "corners": corners})
            summary.update(f"{n}:{t}" for n, t in corners.items() if "?" not in t)
        ordered = dict(sorted(summary.items(), key=lambda kv: (-kv[1], kv[0])))
        return ProposalContext(domain, examples, ordered)
    raise ValueError(f"unknown domain {domain!r}")

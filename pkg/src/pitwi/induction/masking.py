"""Self-supervised training pairs made by hiding facts of final world models."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable

from ..world import REVEALED, SymbolicFact, WorldModel

DEFAULT_MASK_FRACTION = 0.25
DEFAULT_MASK_COUNT = 4


@dataclass
class MaskedSample:
    visible: WorldModel
    hidden: list[SymbolicFact]


def generate_masks(model: WorldModel, fraction: float = DEFAULT_MASK_FRACTION,
                   count: int = DEFAULT_MASK_COUNT, rng_seed=0) -> list[MaskedSample]:
    """``count`` masked copies of ``model``, each hiding ceil(fraction * |facts|)
    facts drawn without replacement.

    Draws come from ``random.Random(rng_seed).sample`` over the facts in
    sorted variable order, so a sample can be regenerated independently.
    """
    if not 0 < fraction < 1:
        raise ValueError("mask fraction must lie strictly between 0 and 1")
    facts = list(model.facts())
    facts.sort(key=lambda f: f.variable)
    if len(facts) < 2:
        raise ValueError("a world model with fewer than two facts has nothing to learn from")
    k = math.ceil(fraction * len(facts))
    rng = random.Random(rng_seed)
    out = []
    for _ in range(count):
        hide = set(rng.sample(range(len(facts)), k))
        visible = WorldModel(model.layout)
        hidden = []
        for i, f in enumerate(facts):
            if i in hide:
                hidden.append(f)
            elif f.source == REVEALED:
                visible.revealed[f.variable] = f.value
            else:
                visible.imputed[f.variable] = f.value
        out.append(MaskedSample(visible, hidden))
    return out


def build_dataset(models: Iterable[WorldModel], fraction: float = DEFAULT_MASK_FRACTION,
                  count: int = DEFAULT_MASK_COUNT, rng_seed=0) -> list[MaskedSample]:
    data: list[MaskedSample] = []
    for b, m in enumerate(models):
        if len(m) < 2:
            continue
        # str seeds hash deterministically across processes
        data.extend(generate_masks(m, fraction, count, rng_seed=f"{rng_seed}:{b}"))
    return data


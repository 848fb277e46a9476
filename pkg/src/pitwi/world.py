"""Visual variables, symbolic facts and the two-layer world model.

A world model keeps directly grounded facts (``revealed``) apart from
pattern-imputed ones (``imputed``).  Reads go through the merged view, where a
revealed value always wins over an imputed one for the same variable.

Variables are plain integer indices; the owning :class:`Layout` gives them
geometry (row-major cells for grids, simulator-order facelets for the cube).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, NamedTuple, Optional

import numpy as np

DOMAINS = ("lake", "crafter", "cube")

REVEALED = "revealed"
IMPUTED = "imputed"


class ContractError(RuntimeError):
    """A caller broke an operation's precondition."""


class VariableId(NamedTuple):
    domain_tag: str
    index: int


@dataclass(frozen=True)
class ValueDomainSpec:
    values: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) < 2:
            raise ValueError("a value domain needs at least two values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"duplicate values in domain: {self.values}")

    @property
    def cardinality(self) -> int:
        return len(self.values)

    def index(self, name: str) -> int:
        try:
            return self.values.index(name)
        except ValueError:
            raise KeyError(f"unknown value {name!r}; expected one of {list(self.values)}") from None

    def name(self, value: int) -> str:
        return self.values[value]


LAKE_VALUES = ValueDomainSpec(("SAFE", "HOLE"))
CRAFTER_VALUES = ValueDomainSpec(
    ("grass", "sand", "water", "tree", "stone", "coal", "iron", "diamond", "lava", "path")
)
CUBE_VALUES = ValueDomainSpec(("R", "G", "B", "Y", "O", "W"))

VALUE_DOMAINS = {"lake": LAKE_VALUES, "crafter": CRAFTER_VALUES, "cube": CUBE_VALUES}


@dataclass(frozen=True)
class SymbolicFact:
    variable: int
    value: int
    source: str = REVEALED

    def to_json(self) -> dict:
        return {"var": self.variable, "value": self.value, "source": self.source}

    @classmethod
    def from_json(cls, obj: dict) -> "SymbolicFact":
        return cls(int(obj["var"]), int(obj["value"]), obj.get("source", REVEALED))


# ---------------------------------------------------------------- layouts


class Layout:
    """Geometry shared by a world model and the pattern kinds that read it."""

    domain: str
    size: int

    def anchor(self, kind: str, u: int):
        """Target key of ``u`` for a pattern kind, or None when not applicable."""
        raise NotImplementedError

    def context_slots(self, kind: str, u: int) -> tuple[tuple[Any, int], ...]:
        """(slot key, variable) pairs a pattern of ``kind`` anchored at ``u`` reads."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GridLayout(Layout):
    rows: int
    cols: int
    domain: str = "lake"
    block: int = 4

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def rc(self, u: int) -> tuple[int, int]:
        return divmod(u, self.cols)

    def index(self, r: int, c: int) -> int:
        return r * self.cols + c

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.rows and 0 <= c < self.cols

    def neighbors(self, u: int) -> list[int]:
        r, c = divmod(u, self.cols)
        out = []
        if r > 0:
            out.append(u - self.cols)
        if c > 0:
            out.append(u - 1)
        if c + 1 < self.cols:
            out.append(u + 1)
        if r + 1 < self.rows:
            out.append(u + self.cols)
        return out

    def anchor(self, kind, u):
        r, c = divmod(u, self.cols)
        if kind == "grid_block":
            b = self.block
            # partial blocks on ragged edges are never aligned blocks
            if (r // b + 1) * b > self.rows or (c // b + 1) * b > self.cols:
                return None
            return (r % b, c % b)
        if kind == "cross":
            if 0 < r < self.rows - 1 and 0 < c < self.cols - 1:
                return "center"
            return None
        return None

    def context_slots(self, kind, u):
        r, c = divmod(u, self.cols)
        if kind == "grid_block":
            b = self.block
            r0, c0 = r - r % b, c - c % b
            return tuple(
                ((dr, dc), (r0 + dr) * self.cols + c0 + dc)
                for dr in range(b)
                for dc in range(b)
                if (r0 + dr, c0 + dc) != (r, c)
            )
        if kind == "cross":
            n = self.cols
            return (("bottom", u + n), ("left", u - 1), ("right", u + 1), ("top", u - n))
        return ()

    def to_json(self):
        return {"type": "grid", "rows": self.rows, "cols": self.cols, "domain": self.domain, "block": self.block}


def layout_from_json(obj: dict) -> Layout:
    if obj["type"] == "grid":
        return GridLayout(obj["rows"], obj["cols"], obj.get("domain", "lake"), obj.get("block", 4))
    if obj["type"] == "cube":
        from .envs.cube import CUBE_LAYOUT

        return CUBE_LAYOUT
    raise ValueError(f"unknown layout type {obj['type']!r}")


# ---------------------------------------------------------------- world model


@dataclass
class WorldModel:
    layout: Layout
    revealed: dict[int, int] = field(default_factory=dict)
    imputed: dict[int, int] = field(default_factory=dict)

    @property
    def domain(self) -> str:
        return self.layout.domain

    def get(self, u: int) -> Optional[int]:
        v = self.revealed.get(u)
        if v is None:
            v = self.imputed.get(u)
        return v

    def known(self, u: int) -> bool:
        return u in self.revealed or u in self.imputed

    def add_revealed(self, u: int, value: int) -> None:
        self.revealed[u] = value

    def add_imputed(self, u: int, value: int) -> None:
        if u in self.revealed:
            raise ContractError(f"variable {u} is already revealed; imputation not allowed")
        self.imputed[u] = value

    def domain_vars(self) -> set[int]:
        return set(self.revealed) | set(self.imputed)

    def __len__(self) -> int:
        return len(self.revealed) + sum(1 for u in self.imputed if u not in self.revealed)

    def merged(self) -> dict[int, int]:
        out = {u: v for u, v in self.imputed.items() if u not in self.revealed}
        out.update(self.revealed)
        return out

    def facts(self) -> Iterator[SymbolicFact]:
        for u, v in sorted(self.revealed.items()):
            yield SymbolicFact(u, v, REVEALED)
        for u, v in sorted(self.imputed.items()):
            if u not in self.revealed:
                yield SymbolicFact(u, v, IMPUTED)

    def copy(self) -> "WorldModel":
        return WorldModel(self.layout, dict(self.revealed), dict(self.imputed))

    def to_json(self) -> dict:
        return {
            "layout": self.layout.to_json(),
            "revealed": [SymbolicFact(u, v, REVEALED).to_json() for u, v in sorted(self.revealed.items())],
            "imputed": [SymbolicFact(u, v, IMPUTED).to_json() for u, v in sorted(self.imputed.items())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WorldModel":
        return cls(
            layout_from_json(obj["layout"]),
            {int(f["var"]): int(f["value"]) for f in obj["revealed"]},
            {int(f["var"]): int(f["value"]) for f in obj["imputed"]},
        )


def merged_value(world: WorldModel, u: int) -> Optional[int]:
    return world.get(u)


# ---------------------------------------------------------------- ground truth


@dataclass
class GroundTruthInstance:
    layout: Layout
    values: np.ndarray
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int16).ravel()
        if self.values.shape[0] != self.layout.size:
            raise ValueError(f"assignment has {self.values.shape[0]} entries, layout needs {self.layout.size}")

    @property
    def domain(self) -> str:
        return self.layout.domain

    def value(self, u: int) -> int:
        return int(self.values[u])

    def to_json(self) -> dict:
        return {"layout": self.layout.to_json(), "values": self.values.tolist(), "payload": self.payload}

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruthInstance":
        return cls(layout_from_json(obj["layout"]), np.array(obj["values"]), obj.get("payload", {}))


# ---------------------------------------------------------------- tokens


@dataclass(frozen=True)
class RevealBudget:
    input_tokens_per_reveal: int
    output_tokens_per_reveal: int

    def __post_init__(self):
        if self.input_tokens_per_reveal <= 0 or self.output_tokens_per_reveal <= 0:
            raise ValueError("per-reveal token budgets must be positive")


PAPER_BUDGETS = {
    "lake": RevealBudget(98, 5),
    "crafter": RevealBudget(184, 5),
    "cube": RevealBudget(88, 5),
}


@dataclass
class TokenLedger:
    budget: RevealBudget
    perception_in: int = 0
    perception_out: int = 0
    proposal_in: int = 0
    proposal_out: int = 0
    reveal_count: int = 0

    def charge_reveal(self) -> None:
        self.reveal_count += 1
        self.perception_in += self.budget.input_tokens_per_reveal
        self.perception_out += self.budget.output_tokens_per_reveal

    @property
    def total_in(self) -> int:
        return self.perception_in + self.proposal_in

    @property
    def total_out(self) -> int:
        return self.perception_out + self.proposal_out

    def to_json(self) -> dict:
        return {
            "budget": [self.budget.input_tokens_per_reveal, self.budget.output_tokens_per_reveal],
            "perception_in": self.perception_in,
            "perception_out": self.perception_out,
            "proposal_in": self.proposal_in,
            "proposal_out": self.proposal_out,
            "reveal_count": self.reveal_count,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TokenLedger":
        return cls(
            RevealBudget(*obj["budget"]),
            obj["perception_in"],
            obj["perception_out"],
            obj["proposal_in"],
            obj["proposal_out"],
            obj["reveal_count"],
        )


def charge_proposal(ledger: TokenLedger, in_tokens: int, out_tokens: int) -> TokenLedger:
    if in_tokens < 0 or out_tokens < 0:
        raise ValueError("token amounts must be non-negative")
    ledger.proposal_in += int(in_tokens)
    ledger.proposal_out += int(out_tokens)
    return ledger


# ---------------------------------------------------------------- operations


def reveal(
    instance: GroundTruthInstance,
    u: int,
    world: WorldModel,
    ledger: TokenLedger,
    noise=None,
) -> SymbolicFact:
    """Ground ``u`` to its true value and pay one reveal.

    ``noise`` is an optional ``(u, true_value) -> value`` hook for perturbed
    perception; by default the oracle is exact.
    """
    if u in world.revealed:
        raise ContractError(f"variable {u} was already revealed")
    if not 0 <= u < instance.layout.size:
        raise ContractError(f"variable {u} out of range for {instance.domain}")
    value = instance.value(u)
    if noise is not None:
        value = int(noise(u, value))
    world.add_revealed(u, value)
    ledger.charge_reveal()
    return SymbolicFact(u, value, REVEALED)


def grounding_counts(world: WorldModel, truth: GroundTruthInstance) -> dict[str, int]:
    n_per = len(world.revealed)
    correct_per = sum(1 for u, v in world.revealed.items() if truth.value(u) == v)
    imp = [(u, v) for u, v in world.imputed.items() if u not in world.revealed]
    correct_imp = sum(1 for u, v in imp if truth.value(u) == v)
    return {"n_per": n_per, "n_correct_per": correct_per, "n_imp": len(imp), "n_correct_imp": correct_imp}


def grounding_accuracy(world: WorldModel, truth: GroundTruthInstance) -> float:
    c = grounding_counts(world, truth)
    denom = c["n_imp"] + c["n_per"]
    if denom == 0:
        raise ContractError("grounding accuracy is undefined for an empty world model")
    return (c["n_correct_imp"] + c["n_correct_per"]) / denom


def facts_from(pairs: Iterable[tuple[int, int]], source: str = REVEALED) -> list[SymbolicFact]:
    return [SymbolicFact(u, v, source) for u, v in pairs]

"""Gated mixture-of-experts pattern inference.

Every pattern is one expert: it applies to variables whose anchor matches its
``target``, it fires when its context agrees with the merged world model, and
it then votes for ``prediction`` with a smoothed one-hot distribution.  The
library mixes the votes of all firing experts in proportion to their weights
and falls back to uniform when none fires.

Gate modes
----------
``consistent``
    at least one context slot is known and matches, and no known slot
    contradicts the pattern.
``strict``
    every context slot is known and matches.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .world import (
    IMPUTED,
    VALUE_DOMAINS,
    ContractError,
    SymbolicFact,
    ValueDomainSpec,
    WorldModel,
)

KINDS = ("grid_block", "cross", "corner")
GATE_MODES = ("consistent", "strict")
CROSS_SLOTS = ("bottom", "left", "right", "top")
CORNER_NAMES = ("URF", "UFL", "ULB", "UBR", "DFR", "DLF", "DBL", "DRB")
DEFAULT_EPSILON = 0.001
DEFAULT_TAU = {"lake": 0.99, "crafter": 1.00, "cube": 0.99}


class MacroParseError(ValueError):
    """A proposed macro pattern does not satisfy its shape contract."""


@dataclass(frozen=True)
class Pattern:
    kind: str
    target: Any
    context: tuple  # sorted ((slot, value), ...)
    prediction: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if not self.context:
            raise ValueError("pattern context must be nonempty")

    @property
    def key(self) -> tuple:
        return (self.kind, self.target, self.context, self.prediction)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "target": _jsonable(self.target),
            "context": [[_jsonable(s), v] for s, v in self.context],
            "prediction": self.prediction,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pattern":
        return make_pattern(
            obj["kind"],
            _hashable(obj["target"]),
            [(_hashable(s), int(v)) for s, v in obj["context"]],
            int(obj["prediction"]),
        )


def make_pattern(kind: str, target, context: Iterable[tuple], prediction: int) -> Pattern:
    return Pattern(kind, target, tuple(sorted(context)), int(prediction))


def _jsonable(x):
    return list(x) if isinstance(x, tuple) else x


def _hashable(x):
    return tuple(x) if isinstance(x, list) else x


# ---------------------------------------------------------------- macros


@dataclass(frozen=True)
class MacroPattern:
    """A proposer-level macro in its JSON wire shape (value names, not indices).

    grid_block: ``{"grid": [[...4 names...] x4]}``
    cross:      ``{"center": .., "top": .., "bottom": .., "left": .., "right": ..}``
    corner:     ``{"cubies": {"URF": "ROW"}}``
    """

    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.payload}

    @classmethod
    def from_json(cls, obj: dict) -> "MacroPattern":
        obj = dict(obj)
        kind = obj.pop("kind")
        return cls(kind, obj)

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _value(values: ValueDomainSpec, name, field: str) -> int:
    if not isinstance(name, str):
        raise MacroParseError(f"{field}: expected a value name, got {name!r}")
    try:
        return values.index(name)
    except KeyError:
        raise MacroParseError(f"{field}: unknown value {name!r}; allowed {list(values.values)}") from None


def parse_macro(macro: MacroPattern, values: ValueDomainSpec) -> list[Pattern]:
    """Expand a macro into its per-target patterns."""
    if macro.kind == "grid_block":
        grid = macro.payload.get("grid")
        if not isinstance(grid, list) or len(grid) != 4 or any(
            not isinstance(row, list) or len(row) != 4 for row in grid
        ):
            raise MacroParseError("grid: expected a 4x4 list of value names")
        cells = {
            (r, c): _value(values, grid[r][c], f"grid[{r}][{c}]") for r in range(4) for c in range(4)
        }
        return [
            make_pattern("grid_block", pos, [(p, v) for p, v in cells.items() if p != pos], cells[pos])
            for pos in sorted(cells)
        ]
    if macro.kind == "cross":
        missing = [k for k in ("center",) + CROSS_SLOTS if k not in macro.payload]
        if missing:
            raise MacroParseError(f"cross: missing fields {missing}")
        ctx = [(s, _value(values, macro.payload[s], s)) for s in CROSS_SLOTS]
        return [make_pattern("cross", "center", ctx, _value(values, macro.payload["center"], "center"))]
    if macro.kind == "corner":
        cubies = macro.payload.get("cubies")
        if not isinstance(cubies, dict) or len(cubies) != 1:
            raise MacroParseError("cubies: a cube pattern must name one corner")
        (name, token), = cubies.items()
        if name not in CORNER_NAMES:
            raise MacroParseError(f"cubies: unknown corner cubie {name!r}")
        if not isinstance(token, str) or len(token) != 3:
            raise MacroParseError(f"cubies.{name}: corner token needs 3 colours, got {token!r}")
        colors = [_value(values, ch, f"cubies.{name}[{i}]") for i, ch in enumerate(token)]
        return [
            make_pattern(
                "corner",
                (name, slot),
                [((name, s), colors[s]) for s in range(3) if s != slot],
                colors[slot],
            )
            for slot in range(3)
        ]
    raise MacroParseError(f"kind: unknown macro kind {macro.kind!r}")


# ---------------------------------------------------------------- library


@dataclass
class MixtureDistribution:
    probabilities: np.ndarray
    active_indices: tuple[int, ...]

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probabilities))  # first maximum = lowest index

    @property
    def confidence(self) -> float:
        return float(np.max(self.probabilities))


class PatternLibrary:
    def __init__(
        self,
        domain: str,
        epsilon: float = DEFAULT_EPSILON,
        gate_mode: str = "consistent",
        initial_weight: float = 1.0,
    ):
        if domain not in VALUE_DOMAINS:
            raise ValueError(f"unknown domain {domain!r}")
        self.domain = domain
        self.values = VALUE_DOMAINS[domain]
        k = self.values.cardinality
        if not 0 < epsilon < 1 / k:
            raise ValueError(f"epsilon must lie in (0, 1/{k})")
        if gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}")
        self.epsilon = float(epsilon)
        self.gate_mode = gate_mode
        self.initial_weight = float(initial_weight)
        self.patterns: list[Pattern] = []
        self._weights: list[float] = []
        self._keys: dict[tuple, int] = {}
        self._index: dict[str, dict[Any, list[int]]] = {}
        self.version = 0
        self._active_cache: dict = {}
        self._mix_cache: dict = {}

    def __len__(self) -> int:
        return len(self.patterns)

    # -- mutation (between episodes only)

    def _touch(self, structural: bool) -> None:
        self.version += 1
        if structural:
            self._active_cache.clear()
        self._mix_cache.clear()

    def add(self, pattern: Pattern, weight: Optional[float] = None) -> bool:
        if not 0 <= pattern.prediction < self.values.cardinality:
            raise ValueError(f"prediction {pattern.prediction} outside the {self.domain} domain")
        if pattern.key in self._keys:
            return False
        w = self.initial_weight if weight is None else float(weight)
        if w < 0:
            raise ValueError("pattern weights must be non-negative")
        self._keys[pattern.key] = len(self.patterns)
        self._index.setdefault(pattern.kind, {}).setdefault(pattern.target, []).append(len(self.patterns))
        self.patterns.append(pattern)
        self._weights.append(w)
        self._touch(True)
        return True

    def add_macro(self, macro: MacroPattern) -> int:
        return sum(self.add(p) for p in parse_macro(macro, self.values))

    def add_macros(self, macros: Iterable[MacroPattern]) -> int:
        return sum(self.add_macro(m) for m in macros)

    @property
    def weights(self) -> np.ndarray:
        return np.array(self._weights, dtype=float)

    def set_weights(self, weights: Sequence[float]) -> None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(self.patterns),):
            raise ValueError(f"expected {len(self.patterns)} weights, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        self._weights = w.tolist()
        self._touch(False)

    def copy(self) -> "PatternLibrary":
        lib = PatternLibrary(self.domain, self.epsilon, self.gate_mode, self.initial_weight)
        for p, w in zip(self.patterns, self._weights):
            lib.add(p, w)
        return lib

    # -- inference

    def _kind_signature(self, kind: str, u: int, world: WorldModel):
        target = world.layout.anchor(kind, u)
        if target is None or target not in self._index.get(kind, {}):
            return None
        slots = world.layout.context_slots(kind, u)
        get = world.get
        return (kind, target, tuple((s, get(v)) for s, v in slots))

    def _active_for(self, sig) -> tuple[int, ...]:
        hit = self._active_cache.get(sig)
        if hit is not None:
            return hit
        kind, target, slot_values = sig
        known = {s: v for s, v in slot_values if v is not None}
        strict = self.gate_mode == "strict"
        active = []
        if known:
            for i in self._index[kind][target]:
                matched = 0
                ok = True
                for s, v in self.patterns[i].context:
                    kv = known.get(s)
                    if kv is None:
                        if strict:
                            ok = False
                            break
                        continue
                    if kv != v:
                        ok = False
                        break
                    matched += 1
                if ok and matched:
                    active.append(i)
        out = tuple(active)
        self._active_cache[sig] = out
        return out

    def active_set(self, u: int, world: WorldModel) -> list[int]:
        if u in world.revealed:
            raise ContractError(f"variable {u} is revealed; patterns are not consulted")
        out: list[int] = []
        for kind in self._index:
            sig = self._kind_signature(kind, u, world)
            if sig is not None:
                out.extend(self._active_for(sig))
        return out

    def _mix(self, active: tuple[int, ...]) -> np.ndarray:
        hit = self._mix_cache.get(active)
        if hit is not None:
            return hit
        k = self.values.cardinality
        eps = self.epsilon
        off = eps / (k - 1)
        total = sum(self._weights[i] for i in active)
        if not active or total <= 0.0:
            probs = np.full(k, 1.0 / k)
        else:
            probs = np.full(k, off)
            gain = (1.0 - eps) - off
            for i in active:
                probs[self.patterns[i].prediction] += gain * self._weights[i] / total
        probs.setflags(write=False)
        self._mix_cache[active] = probs
        return probs

    def mixture(self, u: int, world: WorldModel) -> MixtureDistribution:
        active = tuple(self.active_set(u, world))
        return MixtureDistribution(self._mix(active), active)

    # -- persistence

    def to_json(self) -> dict:
        return {
            "domain": self.domain,
            "epsilon": self.epsilon,
            "gate_mode": self.gate_mode,
            "initial_weight": self.initial_weight,
            "patterns": [dict(p.to_json(), weight=w) for p, w in zip(self.patterns, self._weights)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PatternLibrary":
        lib = cls(obj["domain"], obj["epsilon"], obj["gate_mode"], obj.get("initial_weight", 1.0))
        for p in obj["patterns"]:
            lib.add(Pattern.from_json(p), p.get("weight"))
        return lib

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "PatternLibrary":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------- operations


def active_set(u: int, world: WorldModel, library: PatternLibrary) -> list[int]:
    return library.active_set(u, world)


def mixture(u: int, world: WorldModel, library: PatternLibrary) -> MixtureDistribution:
    return library.mixture(u, world)


@dataclass(frozen=True)
class ImputationConfig:
    tau: float = 0.99

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")

    @classmethod
    def for_domain(cls, domain: str) -> "ImputationConfig":
        return cls(DEFAULT_TAU[domain])


def impute(
    u: int, world: WorldModel, library: PatternLibrary, config: ImputationConfig
) -> Optional[SymbolicFact]:
    mix = library.mixture(u, world)
    if mix.confidence >= config.tau:
        value = mix.argmax
        world.add_imputed(u, value)
        return SymbolicFact(u, value, IMPUTED)
    return None


def impute_closure(
    world: WorldModel,
    library: PatternLibrary,
    config: ImputationConfig,
    candidates: Iterable[int],
    max_passes: Optional[int] = None,
) -> list[SymbolicFact]:
    """Impute over ``candidates`` until a pass adds nothing.

    Later candidates in a pass already see facts imputed earlier in it.
    """
    cands = sorted(set(candidates))
    if any(u in world.revealed for u in cands):
        raise ContractError("imputation candidates must not be revealed")
    if not len(library) or config.tau > 1 - library.epsilon:
        # the best possible confidence is 1 - epsilon
        return []
    cap = len(cands) if max_passes is None else max_passes
    added: list[SymbolicFact] = []
    for _ in range(cap):
        new = 0
        for u in cands:
            if world.known(u):
                continue
            fact = impute(u, world, library, config)
            if fact is not None:
                added.append(fact)
                new += 1
        if not new:
            break
    return added


@dataclass(frozen=True)
class RerankSpec:
    target_values: frozenset

    def __post_init__(self):
        if not self.target_values:
            raise ValueError("reranking needs a nonempty target value set")


def rerank_score(u: int, world: WorldModel, library: PatternLibrary, spec: RerankSpec) -> float:
    probs = library.mixture(u, world).probabilities
    return float(sum(probs[v] for v in spec.target_values))


def rerank(
    candidates: Sequence[int], world: WorldModel, library: PatternLibrary, spec: RerankSpec
) -> list[int]:
    """Order candidates by mixture mass on the target values, best first.

    Ties fall back to row-major order (smaller index first).
    """
    scored = [(-rerank_score(u, world, library, spec), u) for u in candidates]
    scored.sort()
    return [u for _, u in scored]

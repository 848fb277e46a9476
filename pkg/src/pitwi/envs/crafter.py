"""Deterministic Crafter-style world and the frontier-expansion grounding loop.

Only the crafting tree survives from the original game: no mobs, no
survival stats, no daylight, no saplings.  Recipes are pinned in
``data/crafter_recipes.json``.

The agent works through the 14 achievements in a fixed order.  For each
one it gathers what is missing; while no revealed target is reachable it
reveals the best frontier cell (unknown cells next to the revealed region it
can reach).  Reranking orders the frontier by mixture mass on the material
being sought; without it the frontier is taken in row-major order.

Mining a material whose collect achievement is not yet due is avoided, so
achievements unlock strictly in order.
"""
from __future__ import annotations

import heapq
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ..patterns import ImputationConfig, PatternLibrary, impute_closure
from ..world import (
    CRAFTER_VALUES,
    PAPER_BUDGETS,
    GridLayout,
    GroundTruthInstance,
    TokenLedger,
    WorldModel,
    reveal,
)

log = logging.getLogger(__name__)

MATERIALS = CRAFTER_VALUES.values
GRASS, SAND, WATER, TREE, STONE, COAL, IRON, DIAMOND, LAVA, PATH = range(10)
MAX_REJECTIONS = 1000
DEFAULT_SIZE = 64

ACTIONS = (
    "move_left", "move_right", "move_up", "move_down", "do",
    "place_stone", "place_table", "place_furnace", "place_plant",
    "make_wood_pickaxe", "make_stone_pickaxe", "make_iron_pickaxe",
    "make_wood_sword", "make_stone_sword", "make_iron_sword",
)
DIRECTIONS = {"move_left": (0, -1), "move_right": (0, 1), "move_up": (-1, 0), "move_down": (1, 0)}
ITEMS = ("wood", "stone", "coal", "iron", "diamond",
         "wood_pickaxe", "stone_pickaxe", "iron_pickaxe", "wood_sword", "stone_sword", "iron_sword")


def load_recipes() -> dict:
    with resources.files("pitwi.data").joinpath("crafter_recipes.json").open() as fh:
        return json.load(fh)


RECIPES = load_recipes()
ACHIEVEMENTS = tuple(a[0] for a in RECIPES["achievements"])
DEFAULT_QUOTA = dict(RECIPES["quota"])
WALKABLE = frozenset(CRAFTER_VALUES.index(m) for m in RECIPES["walkable"])
_COLLECT = {CRAFTER_VALUES.index(m): spec for m, spec in RECIPES["collect"].items()}
SOURCE_OF = {next(iter(s["receive"])): m for m, s in RECIPES["collect"].items()}  # item -> material name
_ACH_INDEX = {a: i for i, a in enumerate(ACHIEVEMENTS)}
COLLECT_ACH = {CRAFTER_VALUES.index(m): "collect_" + next(iter(s["receive"])) for m, s in RECIPES["collect"].items()}


class GenerationError(RuntimeError):
    pass


class ExplorationExhausted(RuntimeError):
    pass


class RecipeError(RuntimeError):
    """A crafting or placing action whose preconditions do not hold."""


def passable(material, inventory: Optional[dict] = None) -> bool:
    """Walkable outright, or walkable after mining it with the tools held."""
    m = CRAFTER_VALUES.index(material) if isinstance(material, str) else int(material)
    if m in WALKABLE:
        return True
    spec = _COLLECT.get(m)
    if spec is None:
        return False
    inv = inventory or {}
    return all(inv.get(k, 0) >= n for k, n in spec["require"].items())


# ---------------------------------------------------------------- maps


@dataclass
class CrafterMap:
    materials: np.ndarray
    spawn: tuple[int, int]
    seed: Optional[int] = None

    @property
    def size(self) -> int:
        return self.materials.shape[0]

    @property
    def layout(self) -> GridLayout:
        return GridLayout(self.materials.shape[0], self.materials.shape[1], "crafter")

    def truth(self) -> GroundTruthInstance:
        return GroundTruthInstance(self.layout, self.materials.ravel(), {"spawn": list(self.spawn), "seed": self.seed})

    def counts(self) -> dict[str, int]:
        c = np.bincount(self.materials.ravel(), minlength=len(MATERIALS))
        return {MATERIALS[i]: int(c[i]) for i in range(len(MATERIALS))}

    def to_json(self) -> dict:
        return {
            "materials": [[MATERIALS[int(v)] for v in row] for row in self.materials],
            "spawn": list(self.spawn),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CrafterMap":
        mats = np.array([[CRAFTER_VALUES.index(v) for v in row] for row in obj["materials"]], dtype=np.int16)
        return cls(mats, tuple(obj["spawn"]), obj.get("seed"))


def _field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return (f - f.mean()) / (f.std() + 1e-12)


def _terrain(rng: np.random.Generator, size: int) -> np.ndarray:
    shape = (size, size)
    water = _field(rng, shape, 4.0)
    mountain = _field(rng, shape, 5.0)
    forest = _field(rng, shape, 3.0)
    tunnels = _field(rng, shape, 2.0)
    lava_f = _field(rng, shape, 2.0)
    u = rng.random(shape)

    # keep the middle open so the spawn lands on grass
    rr, cc = np.mgrid[0:size, 0:size]
    centre = np.exp(-(((rr - size / 2) ** 2 + (cc - size / 2) ** 2) / (2 * 4.0 ** 2)))
    mountain = mountain - 2.0 * centre
    water = water - 2.0 * centre

    mats = np.full(shape, GRASS, dtype=np.int16)
    mats[water > 1.0] = SAND
    mats[water > 1.3] = WATER
    rock = (mountain > 0.7) & (water <= 1.0)
    mats[rock] = STONE
    mats[rock & (tunnels > 1.2)] = PATH
    mats[rock & (mountain > 1.5) & (lava_f > 1.6)] = LAVA
    inner = rock & (mats == STONE)
    mats[inner & (u < 0.06) & (mountain > 0.8)] = COAL
    mats[inner & (u > 0.975) & (mountain > 1.1)] = IRON
    mats[inner & (u > 0.965) & (u <= 0.975) & (mountain > 1.5)] = DIAMOND
    grass = mats == GRASS
    mats[grass & (((forest > 0.8) & (u < 0.8)) | (u < 0.01))] = TREE

    # diamonds sit against stone
    for r, c in zip(*np.nonzero(mats == DIAMOND)):
        if not any(
            0 <= r + dr < size and 0 <= c + dc < size and mats[r + dr, c + dc] == STONE
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
        ):
            mats[r, c] = STONE
    return mats


def _spawn(mats: np.ndarray) -> Optional[tuple[int, int]]:
    size = mats.shape[0]
    rs, cs = np.nonzero(mats == GRASS)
    if not len(rs):
        return None
    d = (rs - size // 2) ** 2 + (cs - size // 2) ** 2
    i = int(np.lexsort((cs, rs, d))[0])
    return int(rs[i]), int(cs[i])


def _reachable(mats: np.ndarray, spawn, allowed: set[int]) -> np.ndarray:
    size = mats.shape[0]
    seen = np.zeros(mats.shape, dtype=bool)
    seen[spawn] = True
    q = deque([spawn])
    while q:
        r, c = q.popleft()
        for nr, nc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if 0 <= nr < size and 0 <= nc < size and not seen[nr, nc] and int(mats[nr, nc]) in allowed:
                seen[nr, nc] = True
                q.append((nr, nc))
    return seen


def staged_counts(mats: np.ndarray, spawn) -> dict[str, int]:
    """Quota resources reachable at the stage where each one is collected,
    using only the terrain the agent may cross at that stage."""
    base = set(WALKABLE) | {TREE}
    stages = [("tree", TREE, base), ("stone", STONE, base | {STONE}),
              ("coal", COAL, base | {STONE, COAL}), ("iron", IRON, base | {STONE, COAL, IRON}),
              ("diamond", DIAMOND, base | {STONE, COAL, IRON, DIAMOND})]
    out = {}
    for name, m, allowed in stages:
        seen = _reachable(mats, spawn, allowed)
        out[name] = int(np.count_nonzero(seen & (mats == m)))
    return out


def quota_satisfied(cmap: CrafterMap, quota: Optional[dict] = None) -> bool:
    quota = DEFAULT_QUOTA if quota is None else quota
    got = staged_counts(cmap.materials, cmap.spawn)
    return all(got.get(k, 0) >= n for k, n in quota.items())


def generate_world(rng_seed: int = 0, size: int = DEFAULT_SIZE, quota: Optional[dict] = None,
                   max_rejections: int = MAX_REJECTIONS) -> CrafterMap:
    if size < 16:
        raise ValueError("crafter maps need size >= 16")
    quota = DEFAULT_QUOTA if quota is None else quota
    for attempt in range(max_rejections):
        rng = np.random.default_rng([int(rng_seed), size, attempt])
        mats = _terrain(rng, size)
        spawn = _spawn(mats)
        if spawn is None:
            continue
        cmap = CrafterMap(mats, spawn, int(rng_seed))
        if quota_satisfied(cmap, quota):
            return cmap
    raise GenerationError(f"no map met the quota after {max_rejections} attempts (seed {rng_seed}, size {size})")


def world_for_episode(seed: int, episode: int, size: int = DEFAULT_SIZE) -> CrafterMap:
    sub = int(np.random.SeedSequence([int(seed), int(episode)]).generate_state(1)[0])
    return generate_world(sub, size)


# ---------------------------------------------------------------- game state


@dataclass
class GameState:
    terrain: list[int]
    size: int
    pos: int
    facing: tuple[int, int] = (1, 0)
    inventory: dict = field(default_factory=lambda: {k: 0 for k in ITEMS})
    objects: dict = field(default_factory=dict)
    achievements: list[tuple[str, int]] = field(default_factory=list)
    steps: int = 0

    def target(self) -> Optional[int]:
        r, c = divmod(self.pos, self.size)
        nr, nc = r + self.facing[0], c + self.facing[1]
        if 0 <= nr < self.size and 0 <= nc < self.size:
            return nr * self.size + nc
        return None

    def nearby(self, name: str, radius: int = RECIPES["nearby_radius"]) -> bool:
        r, c = divmod(self.pos, self.size)
        return any(
            obj == name and max(abs(r - u // self.size), abs(c - u % self.size)) <= radius
            for u, obj in self.objects.items()
        )

    def free(self, u: int) -> bool:
        return self.terrain[u] in WALKABLE and u not in self.objects

    def unlocked(self) -> set[str]:
        return {a for a, _ in self.achievements}


def _unlock(state: GameState, name: str) -> None:
    if name not in state.unlocked():
        state.achievements.append((name, state.steps))


def step(state: GameState, action: str) -> None:
    """Apply one action.  Moves into blocked cells only turn; a crafting or
    placing action whose preconditions fail raises RecipeError."""
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    state.steps += 1
    if action in DIRECTIONS:
        state.facing = DIRECTIONS[action]
        t = state.target()
        if t is not None and state.free(t):
            state.pos = t
        return
    if action == "place_plant":
        return
    t = state.target()
    inv = state.inventory
    if action == "do":
        if t is None or t in state.objects:
            return
        spec = _COLLECT.get(state.terrain[t])
        if spec is None:
            return
        if not all(inv[k] >= n for k, n in spec["require"].items()):
            raise RecipeError(f"collecting {MATERIALS[state.terrain[t]]} needs {spec['require']}")
        _unlock(state, COLLECT_ACH[state.terrain[t]])
        for k, n in spec["receive"].items():
            inv[k] += n
        state.terrain[t] = CRAFTER_VALUES.index(spec["leaves"])
        return
    if action.startswith("place_"):
        name = action[len("place_"):]
        spec = RECIPES["place"][name]
        if t is None or t in state.objects or MATERIALS[state.terrain[t]] not in spec["where"]:
            raise RecipeError(f"cannot place {name} on the facing cell")
        for need in spec["nearby"]:
            if not state.nearby(need):
                raise RecipeError(f"placing {name} needs a nearby {need}")
        for k, n in spec["uses"].items():
            if inv[k] < n:
                raise RecipeError(f"placing {name} needs {n} {k}")
        for k, n in spec["uses"].items():
            inv[k] -= n
        if spec["type"] == "material":
            state.terrain[t] = CRAFTER_VALUES.index(name)
        else:
            state.objects[t] = name
        _unlock(state, action)
        return
    name = action[len("make_"):]
    spec = RECIPES["make"][name]
    for need in spec["nearby"]:
        if not state.nearby(need):
            raise RecipeError(f"making {name} needs a nearby {need}")
    for k, n in spec["uses"].items():
        if inv[k] < n:
            raise RecipeError(f"making {name} needs {n} {k}")
    for k, n in spec["uses"].items():
        inv[k] -= n
    inv[name] += 1
    _unlock(state, action)


# ---------------------------------------------------------------- frontier


@lru_cache(maxsize=8)
def _neighbours(size: int) -> tuple[tuple[int, ...], ...]:
    lay = GridLayout(size, size, "crafter")
    return tuple(tuple(lay.neighbors(u)) for u in range(size * size))


def frontier_candidates(world: WorldModel, inventory: dict, start: int,
                        terrain: Optional[Sequence[int]] = None) -> list[int]:
    """Unknown cells 4-adjacent to the revealed passable region around ``start``,
    in row-major order.  ``terrain`` overrides revealed materials the agent
    has since changed."""
    nbrs = _neighbours(world.layout.rows)
    rev = world.revealed

    def mat(u):
        return terrain[u] if terrain is not None else rev[u]

    if start not in rev:
        raise ValueError("the start cell must be revealed")
    seen = {start}
    q = deque([start])
    out = set()
    while q:
        x = q.popleft()
        for v in nbrs[x]:
            if v in seen:
                continue
            if v not in rev:
                out.add(v)
            elif passable(mat(v), inventory):
                seen.add(v)
                q.append(v)
    return sorted(out)


# ---------------------------------------------------------------- agent


@dataclass
class EpisodeTrace:
    events: list = field(default_factory=list)

    def add(self, kind: str, step_index: int, **data) -> None:
        self.events.append({"type": kind, "t": step_index, **data})


class CrafterAgent:
    """Frontier-expansion grounding plus a scripted achievement planner."""

    def __init__(self, cmap: CrafterMap, world: WorldModel, ledger: TokenLedger,
                 library: Optional[PatternLibrary] = None, rerank: bool = False,
                 imputation: Optional[ImputationConfig] = None, trace: Optional[EpisodeTrace] = None):
        self.truth = cmap.truth()
        self.size = n = cmap.size
        self.world = world
        self.ledger = ledger
        self.library = library if library is not None and len(library) else None
        self.rerank = rerank and self.library is not None
        self.imputation = imputation
        self.trace = trace or EpisodeTrace()
        self.nbrs = _neighbours(n)
        self.state = GameState(cmap.materials.ravel().tolist(), n, cmap.spawn[0] * n + cmap.spawn[1])
        self.rev = bytearray(n * n)
        for u in world.revealed:
            self.rev[u] = 1
        self.reg = bytearray(n * n)
        self.frontier: set[int] = set()
        self.heap: list = []
        self.version: dict[int, int] = {}
        self.targets: frozenset = frozenset()
        self.due = 0
        self.pass_tab = [False] * len(MATERIALS)
        self.found = False
        self.n_imputed = 0
        self.near: dict[str, set[int]] = {"table": set(), "furnace": set()}

    # -- region and frontier

    def _passable_cell(self, u: int) -> bool:
        return bool(self.rev[u]) and self.pass_tab[self.state.terrain[u]] and u not in self.state.objects

    def _refresh_passability(self) -> bool:
        inv = self.state.inventory
        tab = []
        for m in range(len(MATERIALS)):
            ok = passable(m, inv)
            ach = COLLECT_ACH.get(m)
            if ok and ach is not None and _ACH_INDEX[ach] > self.due:
                ok = False
            tab.append(ok)
        changed = tab != self.pass_tab
        self.pass_tab = tab
        return changed

    def _score(self, u: int) -> float:
        if not self.rerank:
            return 0.0
        probs = self.library.mixture(u, self.world).probabilities
        return float(sum(probs[z] for z in self.targets))

    def _push(self, u: int) -> None:
        v = self.version.get(u, 0) + 1
        self.version[u] = v
        heapq.heappush(self.heap, (-self._score(u), u, v))

    def _rebuild_heap(self) -> None:
        self.heap = []
        self.version = {}
        for u in self.frontier:
            self._push(u)

    def _flood(self, seeds) -> None:
        stack = [u for u in seeds if not self.reg[u] and self._passable_cell(u)]
        for u in stack:
            self.reg[u] = 1
        while stack:
            x = stack.pop()
            for v in self.nbrs[x]:
                if not self.rev[v]:
                    if v not in self.frontier:
                        self.frontier.add(v)
                        self._push(v)
                elif not self.reg[v]:
                    if self._passable_cell(v):
                        self.reg[v] = 1
                        stack.append(v)
                if self.rev[v] and self.state.terrain[v] in self.targets:
                    self.found = True

    def recompute(self) -> None:
        self.reg = bytearray(self.size * self.size)
        self.frontier = set()
        self.found = False
        self._flood([self.state.pos])
        self._rebuild_heap()

    def set_targets(self, materials: Sequence[int]) -> None:
        new = frozenset(materials)
        if new != self.targets:
            self.targets = new
            self.recompute()

    def _reveal(self, u: int) -> None:
        fact = reveal(self.truth, u, self.world, self.ledger)
        self.rev[u] = 1
        self.frontier.discard(u)
        self.trace.add("reveal", self.state.steps, var=u, value=MATERIALS[fact.value])
        touched = [v for v in self.nbrs[u] if v in self.frontier]
        if self.imputation is not None and self.library is not None:
            cands = [v for v in self.nbrs[u] if not self.rev[v] and not self.world.known(v)]
            for f in impute_closure(self.world, self.library, self.imputation, cands):
                self.n_imputed += 1
                self.trace.add("impute", self.state.steps, var=f.variable, value=MATERIALS[f.value])
                touched += [v for v in self.nbrs[f.variable] if v in self.frontier]
        for v in set(touched):
            self._push(v)
        if any(self.reg[v] for v in self.nbrs[u]):
            if self.state.terrain[u] in self.targets:
                self.found = True
            self._flood([u])

    def _next_candidate(self) -> Optional[int]:
        while self.heap:
            _, u, v = self.heap[0]
            if u in self.frontier and self.version.get(u) == v:
                return u
            heapq.heappop(self.heap)
        return None

    # -- navigation

    def _bfs(self, goal, avoid: int = -1) -> Optional[list[int]]:
        start = self.state.pos
        prev = {start: None}
        q = deque([start])
        while q:
            x = q.popleft()
            if goal(x):
                path = []
                while x is not None:
                    path.append(x)
                    x = prev[x]
                return path[::-1]
            for v in self.nbrs[x]:
                if v not in prev and self.reg[v] and v != avoid:
                    prev[v] = x
                    q.append(v)
        return None

    def _act(self, action: str) -> None:
        step(self.state, action)
        self.trace.add("action", self.state.steps, action=action)

    def _move_toward(self, v: int) -> None:
        n = self.size
        d = v - self.state.pos
        action = {-n: "move_up", n: "move_down", -1: "move_left", 1: "move_right"}[d]
        self._act(action)

    def _walk(self, path: Optional[list[int]]) -> None:
        if path is None:
            raise RecipeError("no route to the chosen cell")
        for v in path[1:]:
            self._move_toward(v)
            if self.state.pos != v:
                self._act("do")
                self._move_toward(v)
            if self.state.pos != v:
                raise RecipeError(f"navigation could not enter cell {v}")

    def _facing_dir(self, v: int) -> tuple[int, int]:
        r, c = divmod(self.state.pos, self.size)
        vr, vc = divmod(v, self.size)
        return (vr - r, vc - c)

    # -- subtasks

    def collect(self, material: int) -> None:
        self.set_targets([material])
        while True:
            if self.found:
                path = self._bfs(lambda x: any(
                    self.rev[t] and self.state.terrain[t] == material and t not in self.state.objects
                    for t in self.nbrs[x]))
                if path is not None:
                    self._walk(path)
                    t = next(t for t in self.nbrs[self.state.pos]
                             if self.rev[t] and self.state.terrain[t] == material and t not in self.state.objects)
                    self._move_toward(t)
                    if self.state.pos == t:
                        raise RecipeError("collect target turned out walkable")
                    self._act("do")
                    return
                self.found = False
            u = self._next_candidate()
            if u is None:
                raise ExplorationExhausted(f"frontier exhausted while looking for {MATERIALS[material]}")
            self._reveal(u)

    def gather(self, uses: dict) -> None:
        for item, n in uses.items():
            while self.state.inventory[item] < n:
                self.collect(CRAFTER_VALUES.index(SOURCE_OF[item]))

    def make(self, item: str) -> None:
        spec = RECIPES["make"][item]
        self.gather(spec["uses"])
        needs = spec["nearby"]
        if not all(self.state.nearby(o) for o in needs):
            path = self._bfs(lambda x: self.state.terrain[x] in WALKABLE and all(x in self.near[o] for o in needs))
            if path is None:
                raise RecipeError(f"no reachable cell near {needs}")
            self._walk(path)
        self._act("make_" + item)

    def _safe_to_block(self, f: int) -> bool:
        """True when an object on ``f`` cannot disconnect anything.

        Every 4-neighbour of ``f`` that might ever be crossed must be
        revealed, and all of them must be linked through cells of the 3x3
        ring that are crossable now.  Crossability only grows over an
        episode, so any route through ``f`` keeps a detour around it.
        """
        n = self.size
        r, c = divmod(f, n)
        objects = self.state.objects
        terrain = self.state.terrain
        ends = []
        for v in self.nbrs[f]:
            if self.rev[v] and (v in objects or terrain[v] in (WATER, LAVA)):
                continue
            if not self.rev[v]:
                return False
            ends.append(v)
        if len(ends) <= 1:
            return True
        ring = set()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if (dr or dc) and 0 <= rr < n and 0 <= cc < n:
                    v = rr * n + cc
                    if self.rev[v] and v not in objects and self.pass_tab[terrain[v]]:
                        ring.add(v)
        seen = {ends[0]}
        stack = [ends[0]]
        while stack:
            x = stack.pop()
            if x not in ring and x != ends[0]:
                continue  # an uncrossable endpoint is reached but not expanded
            xr, xc = divmod(x, n)
            for v in self.nbrs[x]:
                vr, vc = divmod(v, n)
                if v in seen or max(abs(vr - r), abs(vc - c)) > 1 or v == f:
                    continue
                if v in ring or v in ends:
                    seen.add(v)
                    stack.append(v)
        return all(v in seen for v in ends)

    def _placement_site(self, spec: dict) -> Optional[tuple]:
        """Nearest (stand, facing cell, approach cell or None) for a placement.

        A tree or minable rock in front is cleared first, which leaves
        placeable ground.  Blocking objects only go where ``_safe_to_block``
        holds."""
        where = {CRAFTER_VALUES.index(m) for m in spec["where"]}
        blocking = spec["type"] == "object"
        terrain, objects = self.state.terrain, self.state.objects
        n = self.size

        def placeable(m):
            if m in where:
                return True
            col = _COLLECT.get(m)
            return col is not None and self.pass_tab[m] and CRAFTER_VALUES.index(col["leaves"]) in where

        start = self.state.pos
        seen = {start}
        q = deque([start])
        while q:
            s = q.popleft()
            if all(s in self.near[o] for o in spec["nearby"]):
                sr, sc = divmod(s, n)
                for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                    fr, fc, pr, pc = sr + dr, sc + dc, sr - dr, sc - dc
                    if not (0 <= fr < n and 0 <= fc < n):
                        continue
                    f = fr * n + fc
                    if not self.rev[f] or f in objects or not placeable(terrain[f]):
                        continue
                    if blocking and not self._safe_to_block(f):
                        continue
                    if terrain[f] not in WALKABLE:
                        return s, f, None
                    # facing a free cell means arriving from the opposite side
                    if 0 <= pr < n and 0 <= pc < n and self.reg[pr * n + pc]:
                        return s, f, pr * n + pc
            for v in self.nbrs[s]:
                if v not in seen and self.reg[v]:
                    seen.add(v)
                    q.append(v)
        return None

    def place(self, name: str) -> None:
        spec = RECIPES["place"][name]
        self.gather(spec["uses"])
        while (choice := self._placement_site(spec)) is None:
            # look around the player, or around the object the placement must be near
            if not self.frontier:
                raise ExplorationExhausted(f"no room to place {name}")
            anchor = self.state.pos
            if spec["nearby"]:
                anchor = min(u for u, o in self.state.objects.items() if o == spec["nearby"][0])
            pr, pc = divmod(anchor, self.size)
            u = min(self.frontier, key=lambda v: (abs(v // self.size - pr) + abs(v % self.size - pc), v))
            self._reveal(u)
        s, f, p = choice
        if p is None:
            self._walk(self._bfs(lambda x: x == s, avoid=f))
            self._move_toward(f)
            if MATERIALS[self.state.terrain[f]] not in spec["where"]:
                self._act("do")
        elif not (self.state.pos == s and self._facing_dir(f) == self.state.facing):
            if self.state.pos == s:
                self._walk([s, p])
            elif self.state.pos != p:
                self._walk(self._bfs(lambda x: x == p))
            self._walk([p, s])
        self._act("place_" + name)
        if spec["type"] == "object":
            self.reg[f] = 0
            r, c = divmod(f, n := self.size)
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if 0 <= r + dr < n and 0 <= c + dc < n:
                        self.near[name].add((r + dr) * n + c + dc)

    def run(self) -> None:
        for i, (name, kind, target) in enumerate(RECIPES["achievements"]):
            self.due = i
            if self._refresh_passability():
                self.recompute()
            if kind == "collect":
                self.collect(CRAFTER_VALUES.index(target))
            elif kind == "place":
                self.place(target)
            else:
                self.make(target)
            if name not in self.state.unlocked():
                raise RecipeError(f"subtask {name} finished without unlocking it")
            self.trace.add("achievement", self.state.steps, name=name)


@dataclass
class CrafterOutcome:
    world: WorldModel
    ledger: TokenLedger
    success: bool
    achievements: list[str]
    n_imputed: int
    failure: Optional[str]
    trace: EpisodeTrace


def given_facts(cmap: CrafterMap) -> dict[int, int]:
    """Facts known for free at the start: the spawn cell."""
    u = cmap.spawn[0] * cmap.size + cmap.spawn[1]
    return {u: int(cmap.materials[cmap.spawn])}


def run_crafter_episode(cmap: CrafterMap, library: Optional[PatternLibrary] = None, rerank: bool = True,
                        imputation: Optional[ImputationConfig] = None,
                        ledger: Optional[TokenLedger] = None) -> CrafterOutcome:
    world = WorldModel(cmap.layout, given_facts(cmap))
    ledger = ledger or TokenLedger(PAPER_BUDGETS["crafter"])
    agent = CrafterAgent(cmap, world, ledger, library, rerank, imputation)
    failure = None
    try:
        agent.run()
    except (ExplorationExhausted, RecipeError) as exc:
        failure = f"{type(exc).__name__}: {exc}"
        log.warning("crafter episode failed: %s", failure)
    unlocked = [a for a, _ in agent.state.achievements]
    success = failure is None and unlocked == list(ACHIEVEMENTS)
    return CrafterOutcome(world, ledger, success, unlocked, agent.n_imputed, failure, agent.trace)

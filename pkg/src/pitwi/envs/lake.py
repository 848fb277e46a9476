"""Deterministic FrozenLake built from aligned 4x4 macro templates, with the
LazySP grounding controller.

LazySP plans on an optimistic map (unknown cells count as SAFE, merged HOLE
cells are blocked).  A plan with no unknown cell left is returned as final;
since the optimistic length lower-bounds the true one, such a plan is
certified shortest.  Otherwise the first unknown cell along the plan is the
next variable to reveal.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from ..patterns import MacroPattern
from ..world import LAKE_VALUES, ContractError, GridLayout, GroundTruthInstance, WorldModel

SAFE, HOLE = 0, 1
MAX_REJECTIONS = 10_000
MOVE_NAMES = {(-1, 0): "up", (1, 0): "down", (0, -1): "left", (0, 1): "right"}


class GenerationError(RuntimeError):
    pass


class PlanningInfeasible(RuntimeError):
    pass


def load_templates() -> dict[str, np.ndarray]:
    with resources.files("pitwi.data").joinpath("lake_templates.json").open() as fh:
        raw = json.load(fh)["templates"]
    return {
        name: np.array([[SAFE if ch == "S" else HOLE for ch in row] for row in rows], dtype=np.int16)
        for name, rows in raw.items()
    }


TEMPLATES = load_templates()


def template_macros(templates: Optional[dict[str, np.ndarray]] = None) -> list[MacroPattern]:
    templates = TEMPLATES if templates is None else templates
    return [
        MacroPattern("grid_block", {"grid": [[LAKE_VALUES.name(int(v)) for v in row] for row in t]})
        for t in templates.values()
    ]


@dataclass
class LakeInstance:
    grid: np.ndarray
    start: tuple[int, int]
    goal: tuple[int, int]
    template_ids: list[str] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    @property
    def layout(self) -> GridLayout:
        return GridLayout(self.grid.shape[0], self.grid.shape[1], "lake")

    def truth(self) -> GroundTruthInstance:
        return GroundTruthInstance(
            self.layout, self.grid.ravel(), {"start": list(self.start), "goal": list(self.goal), "seed": self.seed}
        )

    def to_json(self) -> dict:
        return {
            "grid": [[LAKE_VALUES.name(int(v)) for v in row] for row in self.grid],
            "start": list(self.start),
            "goal": list(self.goal),
            "seed": self.seed,
            "template_ids": self.template_ids,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LakeInstance":
        grid = np.array([[LAKE_VALUES.index(v) for v in row] for row in obj["grid"]], dtype=np.int16)
        return cls(grid, tuple(obj["start"]), tuple(obj["goal"]), obj.get("template_ids", []), obj.get("seed"))


# ---------------------------------------------------------------- shortest paths


def bfs_distances(passable: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """4-neighbour BFS distances from ``source``; -1 where unreachable."""
    rows, cols = passable.shape
    dist = np.full((rows, cols), -1, dtype=np.int32)
    if not passable[source]:
        return dist
    dist[source] = 0
    q = deque([source])
    while q:
        r, c = q.popleft()
        d = dist[r, c] + 1
        for nr, nc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if 0 <= nr < rows and 0 <= nc < cols and passable[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = d
                q.append((nr, nc))
    return dist


def shortest_length(grid: np.ndarray, start, goal) -> int:
    return int(bfs_distances(grid == SAFE, tuple(start))[tuple(goal)])


def _grid_graph(safe: np.ndarray) -> csr_matrix:
    rows, cols = safe.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst = [], []
    horiz = safe[:, :-1] & safe[:, 1:]
    vert = safe[:-1, :] & safe[1:, :]
    src += [idx[:, :-1][horiz], idx[:-1, :][vert]]
    dst += [idx[:, 1:][horiz], idx[1:, :][vert]]
    s, d = np.concatenate(src), np.concatenate(dst)
    n = rows * cols
    return csr_matrix((np.ones(len(s)), (s, d)), shape=(n, n))


def generate_map(
    templates: Optional[dict[str, np.ndarray]] = None,
    size: int = 16,
    min_path: int = 25,
    rng_seed: int = 0,
    method: str = "reject",
) -> LakeInstance:
    templates = TEMPLATES if templates is None else templates
    if size % 4:
        raise ValueError("map size must be divisible by 4")
    if not templates:
        raise ValueError("need at least one template")
    names = sorted(templates)
    rng = np.random.default_rng(rng_seed)
    nb = size // 4
    for _ in range(MAX_REJECTIONS):
        picks = [names[i] for i in rng.integers(len(names), size=nb * nb)]
        grid = np.block([[templates[picks[br * nb + bc]] for bc in range(nb)] for br in range(nb)]).astype(np.int16)
        safe_cells = np.argwhere(grid == SAFE)
        if len(safe_cells) < 2:
            continue
        if method == "reject":
            a, b = rng.choice(len(safe_cells), size=2, replace=False)
            start, goal = tuple(map(int, safe_cells[a])), tuple(map(int, safe_cells[b]))
            if shortest_length(grid, start, goal) >= min_path:
                return LakeInstance(grid, start, goal, picks, rng_seed)
        elif method == "allpairs":
            dist = shortest_path(_grid_graph(grid == SAFE), directed=False, unweighted=True)
            ok = np.argwhere(np.isfinite(dist) & (dist >= min_path))
            if len(ok):
                s, g = ok[rng.integers(len(ok))]
                start, goal = divmod(int(s), size), divmod(int(g), size)
                return LakeInstance(grid, start, goal, picks, rng_seed)
        else:
            raise ValueError(f"unknown generation method {method!r}")
    raise GenerationError(f"{MAX_REJECTIONS} consecutive rejections; template set may be unsatisfiable")


# ---------------------------------------------------------------- LazySP


@dataclass
class PathPlan:
    cells: list[tuple[int, int]]

    def __post_init__(self):
        for (r0, c0), (r1, c1) in zip(self.cells, self.cells[1:]):
            if abs(r0 - r1) + abs(c0 - c1) != 1:
                raise ValueError(f"cells {(r0, c0)} and {(r1, c1)} are not 4-adjacent")

    @property
    def moves(self) -> list[str]:
        return [MOVE_NAMES[(r1 - r0, c1 - c0)] for (r0, c0), (r1, c1) in zip(self.cells, self.cells[1:])]

    def __len__(self) -> int:
        return len(self.cells) - 1


@dataclass
class LazyStep:
    plan: PathPlan
    next: Optional[int] = None  # variable to reveal; None means the plan is final

    @property
    def done(self) -> bool:
        return self.next is None


def optimistic_mask(world: WorldModel) -> np.ndarray:
    lay = world.layout
    mask = np.ones((lay.rows, lay.cols), dtype=bool)
    for u, v in world.merged().items():
        if v == HOLE:
            mask[divmod(u, lay.cols)] = False
    return mask


def lazysp_step(world: WorldModel, start, goal) -> LazyStep:
    lay = world.layout
    passable = optimistic_mask(world)
    dist = bfs_distances(passable, tuple(goal))
    if dist[tuple(start)] < 0:
        raise PlanningInfeasible(f"no optimistic path from {start} to {goal}")
    cells = [tuple(start)]
    r, c = start
    while (r, c) != tuple(goal):
        d = dist[r, c] - 1
        # neighbours in increasing (row, col) order; take the first on a shortest path
        for nr, nc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if 0 <= nr < lay.rows and 0 <= nc < lay.cols and dist[nr, nc] == d:
                r, c = nr, nc
                break
        cells.append((r, c))
    plan = PathPlan(cells)
    for cell in cells:
        u = lay.index(*cell)
        if not world.known(u):
            return LazyStep(plan, u)
    return LazyStep(plan, None)


def path_blocks(plan: PathPlan, layout: GridLayout) -> list[int]:
    """Variables in every aligned 4x4 block the plan passes through."""
    blocks = sorted({(r // 4, c // 4) for r, c in plan.cells})
    return [
        layout.index(br * 4 + dr, bc * 4 + dc)
        for br, bc in blocks
        for dr in range(4)
        for dc in range(4)
    ]


def execute_plan(plan: PathPlan, truth: GroundTruthInstance) -> tuple[bool, Optional[str]]:
    lay = truth.layout
    grid = truth.values.reshape(lay.rows, lay.cols)
    for cell in plan.cells:
        if grid[cell] != SAFE:
            return False, "hole_hit"
    best = shortest_length(grid, plan.cells[0], plan.cells[-1])
    if len(plan) != best:
        return False, "suboptimal"
    return True, None


def given_facts(instance: LakeInstance) -> dict[int, int]:
    lay = instance.layout
    return {lay.index(*instance.start): SAFE, lay.index(*instance.goal): SAFE}


def instance_for_episode(seed: int, episode: int, size: int = 16, min_path: Optional[int] = None,
                         method: Optional[str] = None,
                         templates: Optional[dict[str, np.ndarray]] = None) -> LakeInstance:
    if min_path is None:
        min_path = 25 if size <= 16 else 50
    if method is None:
        method = "reject" if size <= 16 else "allpairs"
    sub = int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])
    return generate_map(templates, size, min_path, sub, method)


def validate_path_plan(cells: Sequence[Sequence[int]], start, goal) -> PathPlan:
    plan = PathPlan([tuple(c) for c in cells])
    if plan.cells[0] != tuple(start) or plan.cells[-1] != tuple(goal):
        raise ContractError("plan must run from start to goal")
    return plan

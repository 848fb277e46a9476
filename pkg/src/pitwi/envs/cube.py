"""Facelet-level Rubik's cube: layout, move engine, scrambles and the
random-reveal controller used for state reconstruction.

Facelets are indexed 0..53 face by face in the order U, R, F, D, L, B, each
face read row-major as seen from outside the cube.  Sticker geometry, the
solved colour scheme and the corner-cubie map are all derived from
``data/cube_layout.json``; nothing here is a hand-written table.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from ..patterns import CORNER_NAMES, MacroPattern
from ..world import (
    CUBE_VALUES,
    ContractError,
    GroundTruthInstance,
    Layout,
    WorldModel,
)

N_FACELETS = 54
FACE_MOVES = ("U", "D", "L", "R", "F", "B")
MOVES = tuple(f + s for f in FACE_MOVES for s in ("", "'", "2"))
UNKNOWN_MARK = "?"


def _load_spec() -> dict:
    with resources.files("pitwi.data").joinpath("cube_layout.json").open() as fh:
        return json.load(fh)


SPEC = _load_spec()
FACES: tuple[str, ...] = tuple(SPEC["faces"])


def _build_geometry():
    pos = np.zeros((N_FACELETS, 3), dtype=int)
    nrm = np.zeros((N_FACELETS, 3), dtype=int)
    for f, face in enumerate(FACES):
        fr = SPEC["face_frames"][face]
        o, right, down = (np.array(fr[k]) for k in ("origin", "right", "down"))
        for r in range(3):
            for c in range(3):
                i = 9 * f + 3 * r + c
                pos[i] = o + c * right + r * down
                nrm[i] = fr["normal"]
    return pos, nrm


POSITIONS, NORMALS = _build_geometry()
_LOOKUP = {(tuple(p), tuple(n)): i for i, (p, n) in enumerate(zip(POSITIONS, NORMALS))}
_FACE_OF_NORMAL = {tuple(SPEC["face_frames"][f]["normal"]): f for f in FACES}


def _quarter_turn(axis: np.ndarray) -> np.ndarray:
    # clockwise seen from outside = -90 degrees about the outward normal
    x, y, z = axis
    cross = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return -cross + np.outer(axis, axis)


def _build_moves() -> dict[str, np.ndarray]:
    out = {}
    for face in FACE_MOVES:
        axis = np.array(SPEC["face_frames"][face]["normal"])
        rot = _quarter_turn(axis)
        perm = np.arange(N_FACELETS)
        for i in range(N_FACELETS):
            if POSITIONS[i] @ axis == 1:
                j = _LOOKUP[(tuple(rot @ POSITIONS[i]), tuple(rot @ NORMALS[i]))]
                perm[j] = i
        out[face] = perm
        out[face + "2"] = perm[perm]
        out[face + "'"] = perm[perm][perm]
    return out


MOVE_PERMS = _build_moves()


def _build_corners() -> dict[str, tuple[int, int, int]]:
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(POSITIONS):
        if np.all(np.abs(p) == 1):
            groups.setdefault(tuple(p), []).append(i)
    out = {}
    for stickers in groups.values():
        first = next(i for i in stickers if NORMALS[i][1] != 0)  # U or D sticker leads
        a, b = (i for i in stickers if i != first)
        # remaining two go clockwise around the corner seen from outside
        if NORMALS[first] @ np.cross(NORMALS[a], NORMALS[b]) != -1:
            a, b = b, a
        slots = (first, a, b)
        name = "".join(_FACE_OF_NORMAL[tuple(NORMALS[i])] for i in slots)
        out[name] = slots
    return {name: out[name] for name in CORNER_NAMES}


CORNERS: dict[str, tuple[int, int, int]] = _build_corners()
FACELET_CORNER: dict[int, tuple[str, int]] = {
    f: (name, s) for name, slots in CORNERS.items() for s, f in enumerate(slots)
}

SOLVED = np.array(
    [CUBE_VALUES.index(SPEC["solved_colors"][FACES[i // 9]]) for i in range(N_FACELETS)], dtype=np.int16
)


@dataclass(frozen=True)
class CubeLayout(Layout):
    domain: str = "cube"
    size: int = N_FACELETS

    def anchor(self, kind, u):
        if kind == "corner":
            return FACELET_CORNER.get(u)
        return None

    def context_slots(self, kind, u):
        if kind != "corner" or u not in FACELET_CORNER:
            return ()
        name, slot = FACELET_CORNER[u]
        return tuple(((name, s), f) for s, f in enumerate(CORNERS[name]) if s != slot)

    def to_json(self):
        return {"type": "cube"}


CUBE_LAYOUT = CubeLayout()


# ---------------------------------------------------------------- states


def apply_move(state: np.ndarray, move: str) -> np.ndarray:
    return state[MOVE_PERMS[move]]


def apply_moves(state: np.ndarray, moves: Sequence[str]) -> np.ndarray:
    for m in moves:
        state = state[MOVE_PERMS[m]]
    return state


def inverse_move(move: str) -> str:
    if move.endswith("2"):
        return move
    if move.endswith("'"):
        return move[0]
    return move + "'"


def to_string(state) -> str:
    return "".join(CUBE_VALUES.name(int(v)) for v in state)


def from_string(s: str) -> np.ndarray:
    if len(s) != N_FACELETS:
        raise ValueError(f"state must be exactly {N_FACELETS} characters, got {len(s)}")
    return np.array([CUBE_VALUES.index(ch) for ch in s], dtype=np.int16)


@dataclass
class CubeDataset:
    seed: int
    moves_per_state: int
    sequences: list[list[str]]
    states: list[np.ndarray]

    def instance(self, i: int) -> GroundTruthInstance:
        return GroundTruthInstance(CUBE_LAYOUT, self.states[i], {"state_index": i, "scramble": self.sequences[i]})

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "moves_per_state": self.moves_per_state,
            "count": len(self.states),
            "scrambles": self.sequences,
            "states": [to_string(s) for s in self.states],
            "corner_map": {k: list(v) for k, v in CORNERS.items()},
            "adjacency": sticker_adjacency(),
        }


def scramble_dataset(seed: int = 42, count: int = 100, moves_per_state: int = 20) -> CubeDataset:
    if count < 1 or moves_per_state < 0:
        raise ValueError("need count >= 1 and moves_per_state >= 0")
    rng = random.Random(seed)
    seqs, states = [], []
    for _ in range(count):
        seq = [rng.choice(MOVES) for _ in range(moves_per_state)]
        seqs.append(seq)
        states.append(apply_moves(SOLVED.copy(), seq))
    return CubeDataset(seed, moves_per_state, seqs, states)


@lru_cache(maxsize=1)
def _adjacency() -> dict[str, list[int]]:
    out = {}
    for i in range(N_FACELETS):
        mates = [
            j
            for j in range(N_FACELETS)
            if j != i and (tuple(POSITIONS[j]) == tuple(POSITIONS[i]) or (
                tuple(NORMALS[j]) == tuple(NORMALS[i]) and np.abs(POSITIONS[j] - POSITIONS[i]).sum() == 1
            ))
        ]
        out[str(i)] = mates
    return out


def sticker_adjacency() -> dict[str, list[int]]:
    """Same-cubie mates plus edge-sharing stickers on the same face."""
    return _adjacency()


# ---------------------------------------------------------------- controller


def random_candidate(world: WorldModel, rng: random.Random) -> int:
    unknown = [u for u in range(N_FACELETS) if not world.known(u)]
    if not unknown:
        raise ContractError("all facelets are known; the sufficiency check should have stopped the loop")
    return rng.choice(unknown)


def sufficiency(world: WorldModel) -> bool:
    return len(world) == N_FACELETS


def corner_token(source, corner: str) -> str:
    """Slot-ordered colour token of a corner, ``?`` for unknown facelets."""
    if corner not in CORNERS:
        raise KeyError(f"unknown corner {corner!r}")
    chars = []
    for f in CORNERS[corner]:
        if isinstance(source, WorldModel):
            v = source.get(f)
        else:
            v = int(source[f])
        chars.append(UNKNOWN_MARK if v is None else CUBE_VALUES.name(v))
    return "".join(chars)


def legal_corner_tokens(corner: str) -> list[str]:
    """All 24 piece/twist tokens that can occupy a corner position."""
    out = set()
    for piece in CORNER_NAMES:
        home = corner_token(SOLVED, piece)
        for t in range(3):
            out.add(home[t:] + home[:t])
    return sorted(out)


def placeholder_library() -> list[MacroPattern]:
    return [
        MacroPattern("corner", {"cubies": {name: tok}})
        for name in CORNER_NAMES
        for tok in legal_corner_tokens(name)
    ]


def observed_corner_library(states: Sequence[np.ndarray]) -> list[MacroPattern]:
    """Corner macros for every token that actually occurs in ``states``."""
    seen = sorted({(name, corner_token(s, name)) for s in states for name in CORNER_NAMES})
    return [MacroPattern("corner", {"cubies": {name: tok}}) for name, tok in seen]


def reconstruction_success(world: WorldModel, truth: GroundTruthInstance) -> bool:
    if not sufficiency(world):
        raise ContractError("reconstruction checked before all 54 facelets are known")
    return all(world.get(u) == truth.value(u) for u in range(N_FACELETS))


def corner_mapping_text() -> str:
    lines = []
    for name, slots in CORNERS.items():
        parts = [f"{FACES[f // 9]}{f % 9 + 1}={f}" for f in slots]
        lines.append(f"{name}: " + ", ".join(parts))
    return "\n".join(lines)

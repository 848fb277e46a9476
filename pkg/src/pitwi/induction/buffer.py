"""Replay buffer of final world models, persisted as JSONL."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

from ..world import WorldModel


@dataclass
class BufferEntry:
    episode_id: int
    success: bool
    world: WorldModel
    reflected: bool = False  # already shown to a proposer

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "success": self.success,
            "reflected": self.reflected,
            "world": self.world.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BufferEntry":
        return cls(obj["episode_id"], obj["success"], WorldModel.from_json(obj["world"]), obj.get("reflected", False))


class ReplayBuffer:
    def __init__(self):
        self._entries: list[BufferEntry] = []

    def append(self, episode_id: int, success: bool, world: WorldModel) -> BufferEntry:
        entry = BufferEntry(episode_id, success, world.copy())
        self._entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[BufferEntry]:
        return iter(self._entries)

    def __getitem__(self, i) -> BufferEntry:
        return self._entries[i]

    @property
    def models(self) -> list[WorldModel]:
        return [e.world for e in self._entries]

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for e in self._entries:
                fh.write(json.dumps(e.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        buf = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    buf._entries.append(BufferEntry.from_json(json.loads(line)))
        return buf

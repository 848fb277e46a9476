"""Pattern proposers and the strict-JSON contract their responses must meet.

Three kinds share one interface, ``propose(context, ledger) -> ProposalResult``:

oracle    deterministic stand-in built from ground truth or from the context
scripted  replays a fixed list of raw responses (tests, offline replays)
remote    chat-completion endpoint; one user message at temperature 0
"""
from __future__ import annotations

import json
import logging
import os
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

from ..patterns import CROSS_SLOTS, MacroParseError, MacroPattern, parse_macro
from ..world import VALUE_DOMAINS, TokenLedger, charge_proposal
from .context import ProposalContext

log = logging.getLogger(__name__)

DEFAULT_K = {"lake": 10, "crafter": 10, "cube": 3}
API_KEY_ENV = "PITWI_PROPOSER_API_KEY"


class ProposalError(RuntimeError):
    pass


@dataclass
class ProposalResult:
    macros: list[MacroPattern] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (raw item, reason)
    tokens_in: int = 0
    tokens_out: int = 0
    error: Optional[str] = None
    prompt: Optional[str] = None


# ---------------------------------------------------------------- prompts


def _asset(name: str) -> str:
    return resources.files("pitwi.induction.prompts").joinpath(name).read_text()


def _fill(template: str, values: dict) -> str:
    # templates carry literal JSON braces, so only named placeholders are replaced
    for key, val in values.items():
        template = template.replace("{" + key + "}", str(val))
    return template


def _grid_text(grid: list[list[str]]) -> str:
    return "\n".join(" ".join(row) for row in grid)


def render_prompt(context: ProposalContext, k: Optional[int] = None) -> str:
    domain = context.domain
    k = DEFAULT_K[domain] if k is None else k
    if domain == "lake":
        parts = [_fill(_asset("lake.txt"), {"K": k}).rstrip("\n")]
        for i, ex in enumerate(context.examples, 1):
            parts.append(_fill(_asset("lake_example.txt"), {"i": i, "PARTIAL_MAP_BLOCK": _grid_text(ex["grid"])}).rstrip("\n"))
        return "\n".join(parts) + "\n"
    if domain == "crafter":
        parts = [_fill(_asset("crafter.txt"), {"K": k}).rstrip("\n")]
        for i, ex in enumerate(context.examples, 1):
            b = ex["bbox"]
            parts.append(_fill(_asset("crafter_example.txt"), {
                "i": i, "episode_id": ex["episode_id"],
                "bbox_xmin": b["xmin"], "bbox_xmax": b["xmax"], "bbox_ymin": b["ymin"], "bbox_ymax": b["ymax"],
                "PARTIAL_MAP_BLOCK": _grid_text(ex["grid"]),
            }).rstrip("\n"))
        return "\n".join(parts) + "\n"
    if domain == "cube":
        from ..envs.cube import CORNERS, corner_mapping_text

        examples = "\n".join(
            f"episode={ex['episode_id']} success={str(ex['success']).lower()} CORNERS_8: "
            + " ".join(f"{n}:{t}" for n, t in ex["corners"].items())
            for ex in context.examples
        )
        summary = "\n".join(f"{pair} x{n}" for pair, n in context.summary.items()) or "(none)"
        return _fill(_asset("cube.txt"), {
            "corner_cubie_names": ", ".join(CORNERS),
            "corner_cubie_to_sticker_mapping": corner_mapping_text(),
            "replay_examples": examples,
            "deduplicated_corner_token_summary": summary,
            "patterns_per_trigger": k,
        })
    raise ValueError(f"unknown domain {domain!r}")


# ---------------------------------------------------------------- parsing


def _item_to_macro(domain: str, item) -> MacroPattern:
    if domain == "lake":
        if not isinstance(item, list) or len(item) != 4 or any(not isinstance(r, list) or len(r) != 4 for r in item):
            raise MacroParseError("pattern must be a 4x4 list of labels")
        for r, row in enumerate(item):
            for c, v in enumerate(row):
                if v not in ("SAFE", "HOLE"):
                    raise MacroParseError(f'grid[{r}][{c}]={v!r}: must be SAFE or HOLE')
        return MacroPattern("grid_block", {"grid": item})
    if domain == "crafter":
        if not isinstance(item, dict):
            raise MacroParseError("pattern must be an object with center/top/bottom/left/right")
        extra = set(item) - {"center", *CROSS_SLOTS}
        if extra:
            raise MacroParseError(f"unexpected fields {sorted(extra)}")
        return MacroPattern("cross", {k: item.get(k) for k in ("center", *CROSS_SLOTS) if k in item})
    if domain == "cube":
        if not isinstance(item, dict) or set(item) != {"cubies"}:
            raise MacroParseError('pattern must be {"cubies": {...}}')
        return MacroPattern("corner", {"cubies": item["cubies"]})
    raise ValueError(f"unknown domain {domain!r}")


def parse_response(text: str, domain: str, k: Optional[int] = None) -> ProposalResult:
    """Strictly parse a proposer response; invalid macros are dropped with a reason.

    Raises ProposalError when the response is not the expected JSON object.
    """
    k = DEFAULT_K[domain] if k is None else k
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ProposalError(f"response is not strict JSON: {exc}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("patterns"), list):
        raise ProposalError('response must be an object with a "patterns" list')
    values = VALUE_DOMAINS[domain]
    result = ProposalResult()
    for item in obj["patterns"]:
        raw = json.dumps(item, sort_keys=True)
        try:
            macro = _item_to_macro(domain, item)
            parse_macro(macro, values)
        except MacroParseError as exc:
            result.rejected.append((raw, str(exc)))
            continue
        if len(result.macros) < k:
            result.macros.append(macro)
        else:
            result.rejected.append((raw, f"over the limit of {k} patterns"))
    return result


# ---------------------------------------------------------------- proposers


class Proposer:
    kind = "base"

    def __init__(self, domain: str, k: Optional[int] = None):
        self.domain = domain
        self.k = DEFAULT_K[domain] if k is None else k

    def propose(self, context: ProposalContext, ledger: Optional[TokenLedger] = None) -> ProposalResult:
        raise NotImplementedError


class OracleProposer(Proposer):
    """Deterministic proposer standing in for a perfect pattern proposer.

    lake     returns the generator's templates
    crafter  returns the most frequent fully revealed crosses in the context
    cube     returns the most frequent fully specified corner tokens
    Crosses and tokens already returned once are not returned again.
    """

    kind = "oracle"

    def __init__(self, domain: str, k: Optional[int] = None, macros: Optional[Sequence[MacroPattern]] = None):
        super().__init__(domain, k)
        if macros is None and domain == "lake":
            from ..envs.lake import template_macros

            macros = template_macros()
        self.macros = list(macros) if macros is not None else None
        self._given: set[str] = set()

    def _candidates(self, context: ProposalContext) -> list[MacroPattern]:
        if self.macros is not None:
            return self.macros
        if self.domain == "crafter":
            counts: Counter = Counter()
            for ex in context.examples:
                g = ex["grid"]
                for r in range(1, len(g) - 1):
                    for c in range(1, len(g[0]) - 1):
                        cross = {"center": g[r][c], "top": g[r - 1][c], "bottom": g[r + 1][c],
                                 "left": g[r][c - 1], "right": g[r][c + 1]}
                        if "unknown" not in cross.values():
                            counts[json.dumps(cross, sort_keys=True)] += 1
            ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            return [MacroPattern("cross", json.loads(s)) for s, _ in ordered]
        if self.domain == "cube":
            out = []
            for pair in context.summary:
                name, tok = pair.split(":")
                out.append(MacroPattern("corner", {"cubies": {name: tok}}))
            return out
        return []

    def propose(self, context, ledger=None):
        result = ProposalResult()
        for m in self._candidates(context):
            key = m.canonical()
            if key in self._given:
                continue
            result.macros.append(m)
            self._given.add(key)
            if len(result.macros) >= self.k:
                break
        return result


class ScriptedProposer(Proposer):
    """Replays raw responses in order; each entry is a string or
    ``{"text": ..., "usage": {"prompt_tokens": .., "completion_tokens": ..}}``."""

    kind = "scripted"

    def __init__(self, domain: str, responses: Sequence, k: Optional[int] = None):
        super().__init__(domain, k)
        self.responses = list(responses)
        self._next = 0

    def propose(self, context, ledger=None):
        if self._next >= len(self.responses):
            return ProposalResult(error="scripted responses exhausted")
        entry = self.responses[self._next]
        self._next += 1
        text, usage = (entry, {}) if isinstance(entry, str) else (entry["text"], entry.get("usage", {}))
        try:
            result = parse_response(text, self.domain, self.k)
        except ProposalError as exc:
            log.error("scripted proposal rejected: %s", exc)
            return ProposalResult(error=str(exc))
        result.tokens_in = int(usage.get("prompt_tokens", 0))
        result.tokens_out = int(usage.get("completion_tokens", 0))
        if ledger is not None:
            charge_proposal(ledger, result.tokens_in, result.tokens_out)
        return result


Transport = Callable[[str, dict, dict, float], dict]


def urllib_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    req = urllib.request.Request(url, data=json.dumps(payload).encode(), headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode())


class RemoteProposer(Proposer):
    """Chat-completion proposer.

    Request: ``{"model", "messages": [{"role": "user", "content": prompt}],
    "temperature": 0}`` POSTed to ``endpoint``.  The reply's
    ``choices[0].message.content`` must be the strict JSON object; its
    ``usage`` block is charged to the ledger.
    """

    kind = "remote"

    def __init__(self, domain: str, endpoint: str, model: str, k: Optional[int] = None,
                 timeout: float = 120.0, transport: Optional[Transport] = None):
        super().__init__(domain, k)
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.transport = transport or urllib_transport

    def request_payload(self, prompt: str) -> dict:
        return {"model": self.model, "messages": [{"role": "user", "content": prompt}], "temperature": 0}

    def propose(self, context, ledger=None):
        prompt = render_prompt(context, self.k)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            reply = self.transport(self.endpoint, self.request_payload(prompt), headers, self.timeout)
            text = reply["choices"][0]["message"]["content"]
        except (urllib.error.URLError, OSError, KeyError, IndexError, TypeError, ValueError) as exc:
            log.error("remote proposer failed: %s", exc)
            return ProposalResult(error=f"transport: {exc}", prompt=prompt)
        usage = reply.get("usage") or {}
        tin, tout = int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
        if ledger is not None:
            charge_proposal(ledger, tin, tout)
        try:
            result = parse_response(text, self.domain, self.k)
        except ProposalError as exc:
            log.error("remote proposal rejected: %s", exc)
            return ProposalResult(error=str(exc), tokens_in=tin, tokens_out=tout, prompt=prompt)
        result.tokens_in, result.tokens_out, result.prompt = tin, tout, prompt
        return result


@dataclass
class ProposerHandle:
    kind: str
    domain: str
    k: Optional[int] = None
    macros: Optional[list] = None        # oracle
    responses: Optional[list] = None     # scripted
    endpoint: Optional[str] = None       # remote
    model: Optional[str] = None

    def build(self, transport: Optional[Transport] = None) -> Proposer:
        if self.kind == "oracle":
            macros = None if self.macros is None else [MacroPattern.from_json(m) for m in self.macros]
            return OracleProposer(self.domain, self.k, macros)
        if self.kind == "scripted":
            return ScriptedProposer(self.domain, self.responses or [], self.k)
        if self.kind == "remote":
            if not self.endpoint or not self.model:
                raise ValueError("remote proposer needs an endpoint and a model name")
            return RemoteProposer(self.domain, self.endpoint, self.model, self.k, transport=transport)
        raise ValueError(f"unknown proposer kind {self.kind!r}")


def propose(proposer: Proposer, context: ProposalContext, ledger: Optional[TokenLedger] = None) -> ProposalResult:
    if context.domain != proposer.domain:
        raise ValueError(f"context is for {context.domain}, proposer for {proposer.domain}")
    return proposer.propose(context, ledger)

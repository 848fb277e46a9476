"""Episode loop, ablations, induction scheduling, metrics and run persistence."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import random
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np
from scipy.ndimage import gaussian_filter1d

from .envs import crafter as crafter_env
from .envs import cube as cube_env
from .envs import lake as lake_env
from .induction.buffer import ReplayBuffer
from .induction.context import extract_proposal_context
from .induction.masking import DEFAULT_MASK_COUNT, DEFAULT_MASK_FRACTION, build_dataset
from .induction.proposers import ProposerHandle
from .induction.reweight import DEFAULT_MAX_ITER, NonFiniteObjective, OptimizerConfig, optimize_weights
from .patterns import (
    DEFAULT_EPSILON,
    DEFAULT_TAU,
    ImputationConfig,
    MacroPattern,
    Pattern,
    PatternLibrary,
    impute_closure,
)
from .world import (
    DOMAINS,
    PAPER_BUDGETS,
    GroundTruthInstance,
    RevealBudget,
    TokenLedger,
    WorldModel,
    charge_proposal,
    grounding_counts,
    reveal,
)

log = logging.getLogger(__name__)

MODES = ("full", "no_inference", "no_reweight")
SCHEMA_VERSION = 1
DEFAULT_PERIOD = {"lake": 5, "crafter": 5, "cube": 10}
DEFAULT_GATE = {"lake": "consistent", "crafter": "consistent", "cube": "strict"}
# LazySP leaves lake models sparse, so lake masks hide most facts and come
# in larger numbers: the training contexts then look like the ones seen
# mid-episode, and ambiguous contexts are common enough to keep MLE weights finite.
DEFAULT_MASKS = {"lake": (0.75, 32), "crafter": (DEFAULT_MASK_FRACTION, DEFAULT_MASK_COUNT),
                 "cube": (DEFAULT_MASK_FRACTION, DEFAULT_MASK_COUNT)}
DEFAULT_SIZE = {"lake": 16, "crafter": 64, "cube": None}
OOD_SIZE = {"lake": 32, "crafter": 128}
CRAFTER_ORACLE_MAPS = 20
CRAFTER_ORACLE_TOP = 200


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    domain: str
    episodes: int = 100
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    trials: int = 3
    mode: str = "full"
    proposer: dict = field(default_factory=lambda: {"kind": "oracle"})
    tau: Optional[float] = None
    epsilon: float = DEFAULT_EPSILON
    gate_mode: Optional[str] = None
    initial_weight: float = 1.0
    mask_fraction: Optional[float] = None
    mask_count: Optional[int] = None
    max_iterations: Optional[int] = None
    reparameterization: str = "exponential"
    proposal_period: Optional[int] = None
    budget: Optional[list] = None
    map_size: Optional[int] = None
    initial_library: Optional[str] = None  # None | "oracle" | "oracle_salted" | path
    frozen_library: Optional[str] = None
    rerank: bool = True
    lake_imputation_scope: str = "path_blocks"
    cube_dataset: dict = field(default_factory=lambda: {"seed": 42, "count": 100, "moves": 20})
    write_traces: bool = False

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.episodes <= 0 or self.trials <= 0 or not self.seeds:
            raise ConfigError("episodes, trials and seeds must be positive / nonempty")
        if self.tau is not None and not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.gate_mode not in (None, "consistent", "strict"):
            raise ConfigError("gate_mode must be 'consistent' or 'strict'")
        if not 0 < self.masks[0] < 1 or self.masks[1] <= 0:
            raise ConfigError("mask fraction must lie in (0, 1) and mask count be positive")
        if self.lake_imputation_scope not in ("path_blocks", "full"):
            raise ConfigError("lake_imputation_scope must be 'path_blocks' or 'full'")
        if self.proposer.get("kind") not in ("oracle", "scripted", "remote"):
            raise ConfigError("proposer kind must be oracle, scripted or remote")
        if self.budget is not None and (len(self.budget) != 2 or min(self.budget) <= 0):
            raise ConfigError("budget must be [input_tokens, output_tokens], both positive")

    # resolved settings
    @property
    def tau_value(self) -> float:
        return DEFAULT_TAU[self.domain] if self.tau is None else self.tau

    @property
    def gate(self) -> str:
        return DEFAULT_GATE[self.domain] if self.gate_mode is None else self.gate_mode

    @property
    def masks(self) -> tuple[float, int]:
        frac, count = DEFAULT_MASKS[self.domain]
        return (frac if self.mask_fraction is None else self.mask_fraction,
                count if self.mask_count is None else self.mask_count)

    @property
    def period(self) -> int:
        return DEFAULT_PERIOD[self.domain] if self.proposal_period is None else self.proposal_period

    @property
    def size(self) -> Optional[int]:
        return DEFAULT_SIZE[self.domain] if self.map_size is None else self.map_size

    @property
    def reveal_budget(self) -> RevealBudget:
        return PAPER_BUDGETS[self.domain] if self.budget is None else RevealBudget(*self.budget)

    @property
    def optimizer(self) -> OptimizerConfig:
        iters = DEFAULT_MAX_ITER[self.domain] if self.max_iterations is None else self.max_iterations
        return OptimizerConfig(max_iterations=iters, reparameterization=self.reparameterization)

    @property
    def inference(self) -> bool:
        return self.mode != "no_inference"

    @property
    def induction(self) -> bool:
        return self.mode != "no_inference" and self.frozen_library is None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def paper_profile(cls, domain: str, **overrides) -> "ExperimentConfig":
        return cls(domain=domain, **overrides)


@dataclass
class EpisodeReport:
    episode: int
    instance: str
    reveal_count: int
    imputation_count: int
    correct_imputations: int
    grounding_accuracy: float
    success: bool
    failure: Optional[str]
    tokens: dict
    detail: dict = field(default_factory=dict)
    trace: Optional[str] = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ProposalRecord:
    after_episode: int
    skipped: bool
    tokens_in: int = 0
    tokens_out: int = 0
    macros: int = 0
    patterns_added: int = 0
    rejected: list = field(default_factory=list)
    error: Optional[str] = None
    library_size: int = 0
    reweight: Optional[dict] = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- libraries


def salt_library(library: PatternLibrary) -> PatternLibrary:
    """Pair every pattern with a twin that predicts a different value from
    the same context (prediction + 1, cyclically)."""
    out = library.copy()
    k = library.values.cardinality
    for p in list(library.patterns):
        out.add(Pattern(p.kind, p.target, p.context, (p.prediction + 1) % k))
    return out


def crafter_oracle_macros(size: int = 64, maps: int = CRAFTER_ORACLE_MAPS, top: int = CRAFTER_ORACLE_TOP) -> list[MacroPattern]:
    """Most frequent crosses over held-out generated maps."""
    counts: Counter = Counter()
    names = crafter_env.MATERIALS
    for i in range(maps):
        m = crafter_env.generate_world(10_000 + i, size).materials
        c, t, b, l, r = m[1:-1, 1:-1], m[:-2, 1:-1], m[2:, 1:-1], m[1:-1, :-2], m[1:-1, 2:]
        keys = np.stack([c, t, b, l, r], axis=-1).reshape(-1, 5)
        counts.update(map(tuple, keys.tolist()))
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    return [MacroPattern("cross", dict(zip(("center", "top", "bottom", "left", "right"), (names[v] for v in key))))
            for key, _ in ordered]


def oracle_macros(domain: str) -> list[MacroPattern]:
    if domain == "lake":
        return lake_env.template_macros()
    if domain == "cube":
        return cube_env.placeholder_library()
    return crafter_oracle_macros()


def build_library(cfg: ExperimentConfig) -> PatternLibrary:
    if cfg.frozen_library is not None:
        lib = PatternLibrary.load(cfg.frozen_library)
        if lib.domain != cfg.domain:
            raise ConfigError(f"frozen library is for {lib.domain}, config is for {cfg.domain}")
        return lib
    lib = PatternLibrary(cfg.domain, cfg.epsilon, cfg.gate, cfg.initial_weight)
    src = cfg.initial_library
    if src in ("oracle", "oracle_salted"):
        lib.add_macros(oracle_macros(cfg.domain))
        if src == "oracle_salted":
            lib = salt_library(lib)
    elif src is not None:
        loaded = PatternLibrary.load(src)
        if loaded.domain != cfg.domain:
            raise ConfigError(f"initial library is for {loaded.domain}, config is for {cfg.domain}")
        for p, w in zip(loaded.patterns, loaded.weights):
            lib.add(p, float(w))
    return lib


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeResult:
    world: WorldModel
    truth: GroundTruthInstance
    ledger: TokenLedger
    success: bool
    failure: Optional[str]
    detail: dict
    trace: list


def _lake_episode(inst: lake_env.LakeInstance, library: Optional[PatternLibrary], cfg: ExperimentConfig) -> EpisodeResult:
    truth = inst.truth()
    world = WorldModel(inst.layout, lake_env.given_facts(inst))
    ledger = TokenLedger(cfg.reveal_budget)
    icfg = ImputationConfig(cfg.tau_value)
    trace: list = []
    try:
        while True:
            step_ = lake_env.lazysp_step(world, inst.start, inst.goal)
            if step_.done:
                break
            if library is not None:
                if cfg.lake_imputation_scope == "full":
                    cands = range(inst.layout.size)
                else:
                    cands = lake_env.path_blocks(step_.plan, inst.layout)
                cands = [u for u in cands if not world.known(u)]
                added = impute_closure(world, library, icfg, cands)
                if added:
                    trace += [{"type": "impute", "var": f.variable, "value": f.value} for f in added]
                    continue
            fact = reveal(truth, step_.next, world, ledger)
            trace.append({"type": "reveal", "var": fact.variable, "value": fact.value})
    except lake_env.PlanningInfeasible as exc:
        return EpisodeResult(world, truth, ledger, False, f"planning_infeasible: {exc}", {}, trace)
    ok, reason = lake_env.execute_plan(step_.plan, truth)
    return EpisodeResult(world, truth, ledger, ok, reason, {"plan_length": len(step_.plan)}, trace)


def _cube_episode(truth: GroundTruthInstance, library: Optional[PatternLibrary], cfg: ExperimentConfig,
                  rng: random.Random) -> EpisodeResult:
    world = WorldModel(cube_env.CUBE_LAYOUT)
    ledger = TokenLedger(cfg.reveal_budget)
    icfg = ImputationConfig(cfg.tau_value)
    trace: list = []
    while not cube_env.sufficiency(world):
        if library is not None:
            unknown = [u for u in range(cube_env.N_FACELETS) if not world.known(u)]
            added = impute_closure(world, library, icfg, unknown)
            trace += [{"type": "impute", "var": f.variable, "value": f.value} for f in added]
            if cube_env.sufficiency(world):
                break
        fact = reveal(truth, cube_env.random_candidate(world, rng), world, ledger)
        trace.append({"type": "reveal", "var": fact.variable, "value": fact.value})
    ok = cube_env.reconstruction_success(world, truth)
    return EpisodeResult(world, truth, ledger, ok, None if ok else "wrong_reconstruction", {}, trace)


def _crafter_episode(cmap: crafter_env.CrafterMap, library: Optional[PatternLibrary], cfg: ExperimentConfig) -> EpisodeResult:
    icfg = ImputationConfig(cfg.tau_value) if library is not None else None
    out = crafter_env.run_crafter_episode(
        cmap, library, rerank=cfg.rerank and library is not None, imputation=icfg,
        ledger=TokenLedger(cfg.reveal_budget),
    )
    return EpisodeResult(out.world, cmap.truth(), out.ledger, out.success, out.failure,
                         {"achievements": len(out.achievements)}, out.trace.events)


class EpisodeSource:
    """Deterministic instances for (seed, episode)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._cube = None
        if cfg.domain == "cube":
            d = cfg.cube_dataset
            self._cube = cube_env.scramble_dataset(d["seed"], d["count"], d["moves"])

    def instance(self, seed: int, episode: int):
        cfg = self.cfg
        if cfg.domain == "lake":
            inst = lake_env.instance_for_episode(seed, episode, cfg.size)
            return inst, f"lake:{seed}:{episode}:{cfg.size}"
        if cfg.domain == "crafter":
            return crafter_env.world_for_episode(seed, episode, cfg.size), f"crafter:{seed}:{episode}:{cfg.size}"
        i = episode % len(self._cube.states)
        return self._cube.instance(i), f"cube:{cfg.cube_dataset['seed']}:{i}"

    def truth(self, seed: int, episode: int) -> GroundTruthInstance:
        inst, _ = self.instance(seed, episode)
        return inst if isinstance(inst, GroundTruthInstance) else inst.truth()


def run_episode(instance, library: Optional[PatternLibrary], cfg: ExperimentConfig,
                rng: Optional[random.Random] = None) -> EpisodeResult:
    lib = library if cfg.inference and library is not None and len(library) else None
    if cfg.domain == "lake":
        return _lake_episode(instance, lib, cfg)
    if cfg.domain == "crafter":
        return _crafter_episode(instance, lib, cfg)
    return _cube_episode(instance, lib, cfg, rng or random.Random(0))


def episode_report(i: int, name: str, res: EpisodeResult) -> EpisodeReport:
    c = grounding_counts(res.world, res.truth)
    denom = c["n_per"] + c["n_imp"]
    acc = (c["n_correct_per"] + c["n_correct_imp"]) / denom if denom else 1.0
    led = res.ledger
    tokens = {
        "perception_in": led.perception_in,
        "perception_out": led.perception_out,
        "proposal_in": led.proposal_in,
        "proposal_out": led.proposal_out,
        "perception": led.perception_in + led.perception_out,
        "proposal": led.proposal_in + led.proposal_out,
        "total": led.total_in + led.total_out,
    }
    return EpisodeReport(i, name, led.reveal_count, c["n_imp"], c["n_correct_imp"], acc, res.success,
                         res.failure, tokens, res.detail)


# ---------------------------------------------------------------- induction


def induction_due(episodes_done: int, total: int, period: int) -> bool:
    return episodes_done % period == 0 and episodes_done < total


def run_induction(library: PatternLibrary, buffer: ReplayBuffer, proposer, cfg: ExperimentConfig,
                  after_episode: int, rng_tag: str, ledger: Optional[TokenLedger] = None) -> ProposalRecord:
    """One trigger: extract context, propose, parse/dedup, mask, reweight."""
    rec = ProposalRecord(after_episode, skipped=False)
    context = extract_proposal_context(buffer, cfg.domain, rng_seed=f"{rng_tag}:context")
    if context is None:
        rec.skipped = True
    else:
        result = proposer.propose(context, ledger)
        rec.tokens_in, rec.tokens_out = result.tokens_in, result.tokens_out
        rec.macros = len(result.macros)
        rec.rejected = [reason for _, reason in result.rejected]
        rec.error = result.error
        before = len(library)
        library.add_macros(result.macros)
        rec.patterns_added = len(library) - before
    if cfg.mode == "full" and len(library):
        data = build_dataset(buffer.models, *cfg.masks, rng_seed=f"{rng_tag}:mask")
        if data:
            try:
                res = optimize_weights(library, data, cfg.optimizer)
                library.set_weights(res.weights)
                rec.reweight = {"ll_start": res.ll_start, "ll_end": res.ll_end,
                                "iterations": res.iterations, "samples": len(data)}
            except NonFiniteObjective as exc:
                log.error("reweighting skipped: %s", exc)
                rec.reweight = {"error": str(exc)}
    rec.library_size = len(library)
    return rec


# ---------------------------------------------------------------- runs


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def smooth_series(values, sigma: float = 2.0) -> list[float]:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return []
    return gaussian_filter1d(arr, sigma, mode="reflect").tolist()


def _mean(xs) -> float:
    xs = list(xs)
    return float(sum(xs) / len(xs)) if xs else 0.0


def aggregate(episodes: list[dict], proposals: list[dict]) -> dict:
    n = len(episodes)
    used = [p for p in proposals if not p["skipped"]]
    prop_total = sum(p["tokens_in"] + p["tokens_out"] for p in proposals)
    perception = _mean(e["tokens"]["perception"] for e in episodes)
    amortized = prop_total / n if n else 0.0
    return {
        "episodes": n,
        "grounding_accuracy": _mean(e["grounding_accuracy"] for e in episodes),
        "planning_accuracy": _mean(1.0 if e["success"] else 0.0 for e in episodes),
        "reveal_count": _mean(e["reveal_count"] for e in episodes),
        "imputation_count": _mean(e["imputation_count"] for e in episodes),
        "perception_tokens": perception,
        "perception_in_tokens": _mean(e["tokens"]["perception_in"] for e in episodes),
        "perception_out_tokens": _mean(e["tokens"]["perception_out"] for e in episodes),
        "proposals": len(proposals),
        "proposal_tokens_per_proposal": prop_total / len(used) if used else 0.0,
        "proposal_tokens_per_episode": amortized,
        "total_tokens": perception + amortized,
    }


def run_single(cfg: ExperimentConfig, seed: int, trial: int, run_dir: Optional[Path] = None,
               source: Optional[EpisodeSource] = None, library: Optional[PatternLibrary] = None,
               transport=None) -> dict:
    source = source or EpisodeSource(cfg)
    library = build_library(cfg) if library is None else library
    buffer = ReplayBuffer()
    proposer = None
    if cfg.induction:
        handle = ProposerHandle(domain=cfg.domain, **cfg.proposer)
        proposer = handle.build(transport)
    episodes, proposals = [], []
    select_rng = random.Random(f"{seed}:{trial}:select")
    if run_dir is not None:
        _atomic_write(run_dir / "config.json", dumps(cfg.to_json()))
        if len(library):
            _atomic_write(run_dir / "libraries" / "initial.json", dumps(library.to_json()))
    episodes_fh = None
    if run_dir is not None:
        episodes_fh = open(run_dir / "episodes.jsonl", "w")
    try:
        for i in range(cfg.episodes):
            inst, name = source.instance(seed, i)
            try:
                res = run_episode(inst, library, cfg, select_rng)
            except Exception as exc:  # environment errors mark the episode failed
                log.exception("episode %d crashed", i)
                truth = inst if isinstance(inst, GroundTruthInstance) else inst.truth()
                res = EpisodeResult(WorldModel(truth.layout), truth, TokenLedger(cfg.reveal_budget),
                                    False, f"error: {exc}", {}, [])
            buffer.append(i, res.success, res.world)
            rep = episode_report(i, name, res)
            if cfg.induction and induction_due(i + 1, cfg.episodes, cfg.period):
                rec = run_induction(library, buffer, proposer, cfg, i + 1, f"{seed}:{trial}:{i + 1}", res.ledger)
                proposals.append(rec.to_json())
                if run_dir is not None:
                    _atomic_write(run_dir / "libraries" / f"trigger_{len(proposals):03d}.json", dumps(library.to_json()))
                rep = episode_report(i, name, res)  # picks up proposal tokens
            if run_dir is not None and cfg.write_traces:
                rel = f"traces/ep_{i:04d}.jsonl"
                _atomic_write(run_dir / rel, "".join(json.dumps(e) + "\n" for e in res.trace))
                rep.trace = rel
            row = rep.to_json()
            episodes.append(row)
            if episodes_fh is not None:
                episodes_fh.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if episodes_fh is not None:
            episodes_fh.close()
    if run_dir is not None:
        buffer.dump(run_dir / "buffer.jsonl")
        _atomic_write(run_dir / "libraries" / "final.json", dumps(library.to_json()))
    section = {
        "seed": seed,
        "trial": trial,
        "episodes": episodes,
        "proposals": proposals,
        "aggregates": aggregate(episodes, proposals),
        "final_library_size": len(library),
    }
    if run_dir is not None:
        _atomic_write(run_dir / "report.json", dumps(section))
    section["_library"] = library
    return section


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[os.PathLike] = None, transport=None) -> dict:
    """All (seed, trial) runs of ``cfg``; returns the RunReport as a dict.

    Live ``PatternLibrary`` objects of each run are kept under the private
    ``_libraries`` key (dropped when serialised)."""
    source = EpisodeSource(cfg)
    runs, libs = [], []
    for seed in cfg.seeds:
        for trial in range(cfg.trials):
            rd = Path(out_dir) / f"seed{seed}_trial{trial}" if out_dir is not None else None
            sec = run_single(cfg, seed, trial, rd, source, transport=transport)
            libs.append(sec.pop("_library"))
            runs.append(sec)
    all_eps = [e for r in runs for e in r["episodes"]]
    all_props = [p for r in runs for p in r["proposals"]]
    series = [_mean(r["episodes"][i]["reveal_count"] for r in runs) for i in range(cfg.episodes)]
    report = {
        "schema_version": SCHEMA_VERSION,
        "domain": cfg.domain,
        "mode": cfg.mode,
        "config": cfg.to_json(),
        "runs": runs,
        "aggregates": aggregate(all_eps, all_props),
        "reveal_series": series,
        "reveal_series_smoothed": smooth_series(series, 2.0),
    }
    validate_report(report)
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "report.json", dumps(report))
    report["_libraries"] = libs
    return report


def run_ood(cfg: ExperimentConfig, frozen_library: Optional[str] = None, out_dir=None) -> dict:
    """Larger maps with a frozen library: no proposals, no reweighting."""
    if cfg.domain not in OOD_SIZE:
        raise ConfigError(f"no OOD setting for {cfg.domain}")
    path = frozen_library or cfg.frozen_library
    if path is None or not Path(path).exists():
        raise ConfigError("OOD runs need an existing frozen library file")
    ood = dataclasses.replace(cfg, frozen_library=str(path), map_size=cfg.map_size or OOD_SIZE[cfg.domain])
    return run_experiment(ood, out_dir)


def public_report(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


# ---------------------------------------------------------------- schema and audit

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 0}
_EPISODE = {
    "type": "object",
    "required": ["episode", "instance", "reveal_count", "imputation_count", "correct_imputations",
                 "grounding_accuracy", "success", "failure", "tokens", "detail", "trace"],
    "properties": {
        "episode": _INT, "instance": {"type": "string"}, "reveal_count": _INT,
        "imputation_count": _INT, "correct_imputations": _INT,
        "grounding_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "success": {"type": "boolean"}, "failure": {"type": ["string", "null"]},
        "tokens": {
            "type": "object",
            "required": ["perception_in", "perception_out", "proposal_in", "proposal_out",
                         "perception", "proposal", "total"],
            "additionalProperties": _INT,
        },
        "detail": {"type": "object"}, "trace": {"type": ["string", "null"]},
    },
}
_AGG = {
    "type": "object",
    "required": ["episodes", "grounding_accuracy", "planning_accuracy", "reveal_count", "perception_tokens",
                 "proposal_tokens_per_proposal", "proposal_tokens_per_episode", "total_tokens"],
    "additionalProperties": _NUM,
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "domain", "mode", "config", "runs", "aggregates",
                 "reveal_series", "reveal_series_smoothed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "domain": {"enum": list(DOMAINS)},
        "mode": {"enum": list(MODES)},
        "config": {"type": "object", "required": ["domain", "episodes", "seeds", "trials", "mode"]},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "trial", "episodes", "proposals", "aggregates"],
                "properties": {"episodes": {"type": "array", "items": _EPISODE},
                               "proposals": {"type": "array", "items": {"type": "object"}},
                               "aggregates": _AGG},
            },
        },
        "aggregates": _AGG,
        "reveal_series": {"type": "array", "items": _NUM},
        "reveal_series_smoothed": {"type": "array", "items": _NUM},
    },
}


def validate_report(report: dict) -> None:
    jsonschema.validate(public_report(report), REPORT_SCHEMA)


def audit_report(report: dict, run_root: Optional[os.PathLike] = None) -> list[str]:
    """Schema plus invariant checks; returns a list of problems (empty = clean)."""
    problems = []
    try:
        validate_report(report)
    except jsonschema.ValidationError as exc:
        return [f"schema: {exc.message}"]
    cfg = ExperimentConfig.from_json(report["config"])
    for run in report["runs"]:
        tag = f"seed{run['seed']}_trial{run['trial']}"
        agg = aggregate(run["episodes"], run["proposals"])
        for k, v in agg.items():
            if abs(v - run["aggregates"][k]) > 1e-9:
                problems.append(f"{tag}: aggregate {k} is {run['aggregates'][k]}, recomputed {v}")
        for e in run["episodes"]:
            t = e["tokens"]
            if t["total"] != t["perception"] + t["proposal"]:
                problems.append(f"{tag} episode {e['episode']}: total tokens are not perception + proposal")
        if run_root is not None:
            buf_path = Path(run_root) / tag / "buffer.jsonl"
            if buf_path.exists():
                buf = ReplayBuffer.load(buf_path)
                if len(buf) != len(run["episodes"]):
                    problems.append(f"{tag}: buffer holds {len(buf)} models for {len(run['episodes'])} episodes")
                source = EpisodeSource(cfg)
                for entry, e in zip(buf, run["episodes"]):
                    c = grounding_counts(entry.world, source.truth(run["seed"], e["episode"]))
                    d = c["n_per"] + c["n_imp"]
                    acc = (c["n_correct_per"] + c["n_correct_imp"]) / d if d else 1.0
                    if abs(acc - e["grounding_accuracy"]) > 1e-12:
                        problems.append(f"{tag} episode {e['episode']}: stored grounding accuracy does not match its world model")
    return problems

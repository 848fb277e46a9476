import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pitwi.envs import lake as L
from pitwi.world import GridLayout, GroundTruthInstance, WorldModel

SAFE, HOLE = 0, 1


def _bfs_len(grid, s, g):
    """Plain BFS written independently of the module."""
    from collections import deque
    n, m = grid.shape
    dist = {s: 0}
    q = deque([s])
    while q:
        r, c = q.popleft()
        for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if 0 <= nr < n and 0 <= nc < m and grid[nr, nc] == SAFE and (nr, nc) not in dist:
                dist[(nr, nc)] = dist[(r, c)] + 1
                q.append((nr, nc))
    return dist.get(g, -1)


def test_six_templates_are_4x4():
    assert len(L.TEMPLATES) == 6
    assert all(t.shape == (4, 4) for t in L.TEMPLATES.values())
    assert len(L.template_macros()) == 6


def test_generated_maps_meet_min_path():
    for seed in range(20):
        inst = L.instance_for_episode(0, seed)
        assert inst.start != inst.goal
        assert inst.grid[inst.start] == SAFE and inst.grid[inst.goal] == SAFE
        assert _bfs_len(inst.grid, inst.start, inst.goal) >= 25
        for br in range(4):
            for bc in range(4):
                block = inst.grid[br * 4:br * 4 + 4, bc * 4:bc * 4 + 4]
                assert np.array_equal(block, L.TEMPLATES[inst.template_ids[br * 4 + bc]])


def test_generation_is_deterministic():
    a = L.generate_map(rng_seed=5)
    b = L.generate_map(rng_seed=5)
    assert a.to_json() == b.to_json()


def test_allpairs_32x32_min_50():
    inst = L.generate_map(size=32, min_path=50, rng_seed=1, method="allpairs")
    assert _bfs_len(inst.grid, inst.start, inst.goal) >= 50


def test_all_safe_template_gives_manhattan_paths():
    open_only = {"open": L.TEMPLATES["open"]}
    inst = L.generate_map(open_only, 16, 25, rng_seed=3)
    (r0, c0), (r1, c1) = inst.start, inst.goal
    assert L.shortest_length(inst.grid, inst.start, inst.goal) == abs(r0 - r1) + abs(c0 - c1)


def test_unsatisfiable_templates_raise(monkeypatch):
    monkeypatch.setattr(L, "MAX_REJECTIONS", 20)
    with pytest.raises(L.GenerationError):
        L.generate_map({"open": L.TEMPLATES["open"]}, 4, 25, rng_seed=0)


def test_map_json_round_trip():
    inst = L.instance_for_episode(1, 2)
    back = L.LakeInstance.from_json(inst.to_json())
    assert np.array_equal(back.grid, inst.grid) and back.start == inst.start and back.goal == inst.goal


def _world3(known):
    w = WorldModel(GridLayout(3, 3))
    for (r, c), v in known.items():
        w.add_revealed(r * 3 + c, v)
    return w


def test_lazysp_fully_known_is_done():
    w = _world3({(r, c): SAFE for r in range(3) for c in range(3)})
    step = L.lazysp_step(w, (0, 0), (2, 2))
    assert step.done and len(step.plan) == 4


def test_lazysp_returns_first_unknown_on_path():
    known = {(r, c): SAFE for r in range(3) for c in range(3) if (r, c) != (1, 1)}
    known[(0, 1)] = HOLE
    w = _world3(known)
    step = L.lazysp_step(w, (0, 0), (2, 2))
    # with (0,1) blocked the tie-broken path goes down, then through (1,1)
    assert step.plan.cells[:3] == [(0, 0), (1, 0), (1, 1)]
    assert step.next == 4


def test_lazysp_replans_around_hole():
    known = {(r, c): SAFE for r in range(3) for c in range(3)}
    known[(1, 1)] = HOLE
    step = L.lazysp_step(_world3(known), (0, 0), (2, 2))
    assert step.done and len(step.plan) == 4 and (1, 1) not in step.plan.cells


def test_lazysp_infeasible():
    known = {(0, 1): HOLE, (1, 0): HOLE, (0, 0): SAFE}
    with pytest.raises(L.PlanningInfeasible):
        L.lazysp_step(_world3(known), (0, 0), (2, 2))


def test_execute_plan_outcomes():
    grid = np.zeros((3, 3), dtype=int)
    grid[1, 1] = HOLE
    truth = GroundTruthInstance(GridLayout(3, 3), grid)
    assert L.execute_plan(L.PathPlan([(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]), truth) == (False, "hole_hit")
    long = L.PathPlan([(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0)])
    ok, why = L.execute_plan(long, truth)
    assert (ok, why) == (False, "suboptimal")
    assert L.execute_plan(L.PathPlan([(0, 0), (0, 1), (0, 2), (1, 2), (2, 2)]), truth) == (True, None)


def test_plan_moves_and_validation():
    plan = L.validate_path_plan([(0, 0), (0, 1), (1, 1)], (0, 0), (1, 1))
    assert plan.moves == ["right", "down"]
    with pytest.raises(ValueError):
        L.PathPlan([(0, 0), (1, 1)])


def _run_no_inference(inst):
    from pitwi.world import PAPER_BUDGETS, TokenLedger, reveal
    truth = inst.truth()
    w = WorldModel(inst.layout, L.given_facts(inst))
    led = TokenLedger(PAPER_BUDGETS["lake"])
    while True:
        step = L.lazysp_step(w, inst.start, inst.goal)
        if step.done:
            return step, w, led
        reveal(truth, step.next, w, led)


@given(st.integers(0, 10_000))
def test_no_inference_loop_always_succeeds(seed):
    inst = L.instance_for_episode(seed, 0)
    step, w, led = _run_no_inference(inst)
    assert led.reveal_count <= inst.layout.size
    assert L.execute_plan(step.plan, inst.truth()) == (True, None)
    assert all(w.get(inst.layout.index(*c)) == SAFE for c in step.plan.cells)


def test_path_blocks_cover_touched_blocks():
    plan = L.PathPlan([(0, 3), (0, 4), (1, 4)])
    cells = L.path_blocks(plan, GridLayout(8, 8))
    assert len(cells) == 32
    assert set(cells) == {r * 8 + c for r in range(4) for c in range(8)}

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oelab.data.modalities import default_registry
from oelab.data.scenes import SceneConfig, make_scene
from oelab.masking import (
    IGNORE,
    TARGET,
    VISIBLE,
    MaskPlan,
    bandset_mask_v1,
    make_plan,
    plan_v11,
    random_mask,
    time_mask,
)
from oelab.seeding import rng_for
from oelab.tokens.grid import patchify_scene

REG = default_registry()


def _tokens(grouping="single", h=32, w=32, t=4, patch=8, seed=0):
    scene = make_scene(seed, SceneConfig(height=h, width=w, timesteps=t), REG)
    return patchify_scene(scene, REG, patch=patch, grouping=grouping)


TS = _tokens()
TS_V1 = _tokens("v1")
SMALL = _tokens(h=16, w=16, t=2)


def test_role_constants():
    assert (VISIBLE, TARGET, IGNORE) == (0, 1, 2)


# -- random mask ------------------------------------------------------------


def test_random_mask_exact_count_and_coverage():
    plan = random_mask(TS, rng_for(0, "rm"), ratio=0.5)
    plan.validate(TS)
    decode_only = TS.token_decode_only()
    sensors = ~decode_only
    n = int(sensors.sum())
    assert (plan.assignment[decode_only] == TARGET).all()
    assert (plan.assignment[sensors] == TARGET).sum() == n // 2
    assert (plan.assignment[sensors] == VISIBLE).sum() == n - n // 2
    assert len(plan.ignore_idx) == 0


@settings(max_examples=30, deadline=None)
@given(ratio=st.floats(0.05, 0.95), seed=st.integers(0, 10_000))
def test_random_mask_count_formula_property(ratio, seed):
    plan = random_mask(SMALL, rng_for(seed, "prop"), ratio=ratio)
    sensors = ~SMALL.token_decode_only()
    n = int(sensors.sum())
    expected = min(max(int(np.floor(ratio * n + 0.5)), 1), n - 1)
    assert (plan.assignment[sensors] == TARGET).sum() == expected


def test_random_mask_rejects_bad_ratio():
    for ratio in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            random_mask(TS, rng_for(0, "x"), ratio=ratio)


def test_random_mask_deterministic():
    a = random_mask(TS, rng_for(3, "det"))
    b = random_mask(TS, rng_for(3, "det"))
    np.testing.assert_array_equal(a.assignment, b.assignment)


# -- time mask --------------------------------------------------------------


def test_time_mask_exactly_timestep_separable():
    for seed in range(30):
        plan = time_mask(TS, rng_for(seed, "tm"))
        plan.validate(TS)
        assert plan.used_time_mask
        assert 1 <= len(plan.masked_times) <= TS.timesteps - 1
        decode_only = TS.token_decode_only()
        token_time = TS.token_field("time")
        in_masked = np.isin(token_time, plan.masked_times)
        expected = np.where(in_masked, TARGET, VISIBLE).astype(np.int8)
        expected[decode_only] = TARGET
        np.testing.assert_array_equal(plan.assignment, expected)


def test_time_mask_single_timestep_falls_back(caplog):
    ts1 = _tokens(t=1)
    with caplog.at_level("WARNING"):
        plan = time_mask(ts1, rng_for(0, "fb"))
    assert not plan.used_time_mask
    assert "falling back" in caplog.text
    plan.validate(ts1)


# -- v1 bandset mask --------------------------------------------------------


def test_v1_structure_group_level():
    plan = bandset_mask_v1(TS_V1, rng_for(1, "v1"))
    plan.validate(TS_V1)
    offsets = TS_V1.group_offsets
    for gi, g in enumerate(TS_V1.groups):
        states = plan.assignment[offsets[gi] : offsets[gi + 1]]
        if g.decode_only:
            n = len(g)
            assert (states == IGNORE).sum() == n // 2
            assert (states == TARGET).sum() == n - n // 2
        else:
            assert len(np.unique(states)) == 1  # whole bandset, one role


def test_v1_always_something_visible():
    for seed in range(200):
        plan = bandset_mask_v1(TS_V1, rng_for(seed, "vis"))
        assert len(plan.visible_idx) > 0
        assert len(plan.target_idx) > 0


def test_v1_map_ignore_fraction_half_over_1000_plans():
    decode_only = TS_V1.token_decode_only()
    ignored = total = 0
    for seed in range(1000):
        plan = bandset_mask_v1(TS_V1, rng_for(seed, "stats"))
        ignored += int((plan.assignment[decode_only] == IGNORE).sum())
        total += int(decode_only.sum())
    frac = ignored / total
    assert abs(frac - 0.5) <= 0.03


def test_v11_never_ignores_map_tokens_over_1000_plans():
    decode_only = TS_V1.token_decode_only()
    for seed in range(1000):
        plan = plan_v11(TS_V1, rng_for(seed, "v11"))
        assert (plan.assignment[decode_only] == TARGET).all()
        assert len(plan.ignore_idx) == 0


def test_p_t_controls_time_mask_frequency():
    hits = 0
    n = 2000
    for seed in range(n):
        plan = plan_v11(TS, rng_for(seed, "pt"), p_t=0.5)
        hits += int(plan.used_time_mask)
    assert abs(hits / n - 0.5) <= 0.03


def test_p_t_extremes():
    assert not plan_v11(TS, rng_for(0, "p0"), p_t=0.0).used_time_mask
    assert plan_v11(TS, rng_for(0, "p1"), p_t=1.0).used_time_mask
    with pytest.raises(ValueError):
        plan_v11(TS, rng_for(0, "pb"), p_t=1.5)


# -- dispatcher and validation ----------------------------------------------


def test_make_plan_dispatch():
    for strategy in ("v11", "v1", "random", "time"):
        ts = TS_V1 if strategy == "v1" else TS
        plan = make_plan(ts, rng_for(0, strategy), strategy)
        plan.validate(ts)
    with pytest.raises(ValueError):
        make_plan(TS, rng_for(0, "bad"), "v2")


def test_validate_rejects_visible_decode_only():
    plan = random_mask(TS, rng_for(0, "val"))
    bad = plan.assignment.copy()
    bad[np.flatnonzero(TS.token_decode_only())[0]] = VISIBLE
    with pytest.raises(ValueError, match="decode-only"):
        MaskPlan(assignment=bad).validate(TS)


def test_validate_rejects_empty_sides():
    all_visible = np.full(TS.num_tokens, VISIBLE, dtype=np.int8)
    all_visible[TS.token_decode_only()] = IGNORE
    with pytest.raises(ValueError, match="no target"):
        MaskPlan(assignment=all_visible).validate(TS)
    all_target = np.full(TS.num_tokens, TARGET, dtype=np.int8)
    with pytest.raises(ValueError, match="no visible"):
        MaskPlan(assignment=all_target).validate(TS)


def test_validate_rejects_wrong_length():
    with pytest.raises(ValueError, match="covers"):
        MaskPlan(assignment=np.zeros(3, dtype=np.int8)).validate(TS)

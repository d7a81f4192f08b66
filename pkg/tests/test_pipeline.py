import json
import math
import re
from collections import Counter
from importlib import resources

import pytest
from hypothesis import given, strategies as st

from pixkit import pipeline as pl
from pixkit.numcore import RngState


def shipped_tasks():
    return pl.load_tasks(json.loads(resources.files("pixkit.data").joinpath("tasks.json").read_text()))


def task(tid, *sizes, weight=1.0):
    return pl.TaskRecord(tid, tuple((f"{tid}_{i}", n) for i, n in enumerate(sizes)), weight)


# -- templates

def test_referring_template_renders():
    t = pl.InstructionTemplate("referring_segmentation",
                               "Please mark the pixels in {color} based on the referring description: {caption}")
    assert pl.render_instruction(t, {"color": "red", "caption": "the left dog"}) == (
        "Please mark the pixels in red based on the referring description: the left dog"
    )


def test_shipped_corpus_contains_required_template():
    tmpls = pl.load_templates()
    texts = [t.text for t in tmpls["referring_segmentation"]]
    assert "Please mark the pixels in {color} based on the referring description: {caption}" in texts
    assert all(len(v) >= 6 for v in tmpls.values())


def test_no_placeholder_verbatim_and_extra_ignored():
    t = pl.InstructionTemplate("denoising", "Remove the noise from this photo.")
    assert pl.render_instruction(t, {"unused": "x"}) == t.text


def test_missing_variable_named():
    t = pl.InstructionTemplate("x", "Paint {color} over {caption}")
    with pytest.raises(KeyError, match="caption"):
        pl.render_instruction(t, {"color": "blue"})


def test_every_shipped_template_renders_fully():
    for variants in pl.load_templates().values():
        for t in variants:
            out = pl.render_instruction(t, {p: "VAL" for p in t.placeholders})
            assert "{" not in out and "}" not in out


@given(st.text(alphabet="abc xyz", min_size=1), st.text(alphabet="abc xyz", min_size=1),
       st.text(alphabet="abc xyz", min_size=1), st.text(alphabet="abc xyz", min_size=1))
def test_render_injective(c1, k1, c2, k2):
    t = pl.InstructionTemplate("r", "Mark {color}; describe: {caption}.")
    a = pl.render_instruction(t, {"color": c1, "caption": k1})
    b = pl.render_instruction(t, {"color": c2, "caption": k2})
    assert (a == b) == ((c1, k1) == (c2, k2))


def test_render_does_not_recurse():
    t = pl.InstructionTemplate("r", "{a} and {b}")
    assert pl.render_instruction(t, {"a": "{b}", "b": "x"}) == "{b} and x"


# -- stage 1

def test_stage1_small_task_repeats_evenly():
    plan = pl.stage1_plan([task("small", 50)], 200)
    counts = Counter(i for _, _, i in plan.entries)
    assert len(plan.entries) == 200 and set(counts.values()) == {4} and len(counts) == 50


def test_stage1_large_task_subsamples_distinct():
    plan = pl.stage1_plan([task("big", 1000)], 200, RngState(3))
    idx = [i for _, _, i in plan.entries]
    assert len(idx) == 200 == len(set(idx)) and all(0 <= i < 1000 for i in idx)


def test_stage1_shipped_totals_exact():
    tasks = shipped_tasks()
    plan = pl.stage1_plan(tasks, 200, RngState(1))
    assert plan.totals == {t.task_id: 200 for t in tasks}
    sizes = {(t.task_id, d): n for t in tasks for d, n in t.datasets}
    assert all(0 <= i < sizes[(tid, d)] for tid, d, i in plan.entries)


@given(st.lists(st.integers(1, 400), min_size=1, max_size=4), st.integers(1, 500), st.integers(0, 99))
def test_stage1_counts_balanced(sizes, target, seed):
    t = task("t", *sizes)
    plan = pl.stage1_plan([t], target, RngState(seed))
    assert len(plan.entries) == target
    c = Counter((d, i) for _, d, i in plan.entries)
    total = sum(sizes)
    lo, hi = target // total, math.ceil(target / total)
    assert all(lo <= v <= hi for v in c.values())
    if target >= total:
        assert len(c) == total
    assert plan.entries == pl.stage1_plan([t], target, RngState(seed)).entries


def test_stage1_errors():
    with pytest.raises(ValueError):
        pl.stage1_plan([task("t", 5)], 0)
    with pytest.raises(ValueError):
        pl.stage1_plan([task("t", 0)], 10)
    with pytest.raises(ValueError):
        pl.TaskRecord("t", (("d", -1),))


# -- stage 2

def test_stage2_weights():
    half = pl.stage2_plan([task("a", 1000, weight=0.5)], RngState(0), t2i_task=None)
    assert len(half.entries) == 500 and len({i for *_, i in half.entries}) == 500
    assert half.entries == pl.stage2_plan([task("a", 1000, weight=0.5)], RngState(0), t2i_task=None).entries
    double = pl.stage2_plan([task("a", 100, weight=2.0)], RngState(0), t2i_task=None)
    assert set(Counter(i for *_, i in double.entries).values()) == {2}


def test_stage2_t2i_one_to_one():
    tasks = [task("a", 6000), task("b", 8000, weight=0.5), pl.TaskRecord(pl.T2I_TASK, (("t2i", 3000),), 1.0)]
    plan = pl.stage2_plan(tasks, RngState(0))
    assert plan.totals["a"] + plan.totals["b"] == 10_000
    assert plan.totals[pl.T2I_TASK] == 10_000


def test_stage2_shipped_invariants():
    tasks = shipped_tasks()
    plan = pl.stage2_plan(tasks, RngState(2))
    totals = plan.dataset_totals
    for t in tasks:
        if t.task_id == pl.T2I_TASK:
            continue
        for d, n in t.datasets:
            assert totals.get((t.task_id, d), 0) == math.floor(t.weight * n + 0.5)
    others = sum(v for k, v in plan.totals.items() if k != pl.T2I_TASK)
    assert plan.totals[pl.T2I_TASK] == others


def test_stage2_missing_t2i():
    with pytest.raises(ValueError, match="text_to_image"):
        pl.stage2_plan([task("a", 10)], RngState(0))


def test_round_half_up():
    assert [pl._round_half_up(x) for x in (0.5, 1.5, 2.5, 2.49)] == [1, 2, 3, 2]


# -- epoch order and serialization

def test_epoch_order():
    plan = pl.stage1_plan([task("a", 30), task("b", 7)], 20)
    o1 = pl.epoch_order(plan, RngState(1))
    assert Counter(o1) == Counter(plan.entries)
    assert o1 == pl.epoch_order(plan, RngState(1))
    assert o1 != pl.epoch_order(plan, RngState(2))
    with pytest.raises(ValueError):
        pl.epoch_order(pl.MixPlan(), RngState(0))


def test_jsonl_roundtrip():
    plan = pl.stage1_plan([task("a", 3)], 5)
    lines = [json.loads(x) for x in plan.to_jsonl().splitlines()]
    assert [(d["task_id"], d["dataset_id"], d["index"]) for d in lines] == plan.entries


def test_placeholders_parsed():
    t = pl.InstructionTemplate("x", "Draw a {color} box around {caption} ({extra})")
    assert t.placeholders == ["color", "caption", "extra"]
    assert re.fullmatch(r"Draw a R box around C \(E\)", pl.render_instruction(t, {"color": "R", "caption": "C", "extra": "E"}))

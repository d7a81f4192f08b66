"""Task registry, instruction templates and the two-stage data-balancing planner."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .numcore import RngState

T2I_TASK = "text_to_image"
_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    datasets: tuple[tuple[str, int], ...]
    weight: float = 1.0

    def __post_init__(self) -> None:
        if any(n < 0 for _, n in self.datasets):
            raise ValueError(f"{self.task_id}: dataset sizes must be non-negative")
        if self.weight < 0:
            raise ValueError(f"{self.task_id}: weight must be non-negative")

    @property
    def size(self) -> int:
        return sum(n for _, n in self.datasets)

    @classmethod
    def from_json(cls, obj: Mapping) -> TaskRecord:
        return cls(
            str(obj["task_id"]),
            tuple((str(d["dataset_id"]), int(d["count"])) for d in obj["datasets"]),
            float(obj.get("weight", 1.0)),
        )


def load_tasks(obj) -> list[TaskRecord]:
    tasks = obj["tasks"] if isinstance(obj, Mapping) else obj
    return [TaskRecord.from_json(t) for t in tasks]


# -- instruction templates ------------------------------------------------------

@dataclass(frozen=True)
class InstructionTemplate:
    task_id: str
    text: str
    variant: int = 0

    @property
    def placeholders(self) -> list[str]:
        return _PLACEHOLDER.findall(self.text)


def render_instruction(tmpl: InstructionTemplate, variables: Mapping[str, str]) -> str:
    """Substitute ``{name}`` placeholders; extra variables are ignored."""
    missing = [p for p in tmpl.placeholders if p not in variables]
    if missing:
        raise KeyError(f"missing template variable(s): {', '.join(missing)}")
    return _PLACEHOLDER.sub(lambda mt: str(variables[mt.group(1)]), tmpl.text)


def load_templates(path=None) -> dict[str, list[InstructionTemplate]]:
    if path is None:
        raw = resources.files("pixkit.data").joinpath("templates.json").read_text()
    else:
        with open(path) as fh:
            raw = fh.read()
    out: dict[str, list[InstructionTemplate]] = {}
    for task_id, texts in json.loads(raw).items():
        out[task_id] = [InstructionTemplate(task_id, t, i) for i, t in enumerate(texts)]
    return out


# -- planning -------------------------------------------------------------------

@dataclass
class MixPlan:
    entries: list[tuple[str, str, int]] = field(default_factory=list)

    @property
    def totals(self) -> dict[str, int]:
        return dict(Counter(task for task, _, _ in self.entries))

    @property
    def dataset_totals(self) -> dict[tuple[str, str], int]:
        return dict(Counter((task, ds) for task, ds, _ in self.entries))

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"task_id": t, "dataset_id": d, "index": i}) + "\n" for t, d, i in self.entries
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _resample(g: np.random.Generator, size: int, total: int) -> np.ndarray:
    """Indices into ``range(size)``: whole passes, then a random partial pass."""
    full, rest = divmod(total, size)
    parts = [np.tile(np.arange(size), full)]
    if rest:
        parts.append(np.sort(g.choice(size, rest, replace=False)))
    return np.concatenate(parts).astype(np.int64)


def _expand(task: TaskRecord, indices: np.ndarray) -> list[tuple[str, str, int]]:
    """Map pooled indices back to (task, dataset, local index)."""
    bounds = np.cumsum([0] + [n for _, n in task.datasets])
    which = np.searchsorted(bounds, indices, side="right") - 1
    return [
        (task.task_id, task.datasets[w][0], int(i - bounds[w])) for w, i in zip(which, indices)
    ]


def stage1_plan(tasks: Sequence[TaskRecord], per_task_target: int, rng: RngState = RngState(0)) -> MixPlan:
    """Every task contributes exactly ``per_task_target`` items.

    Small tasks are repeated, large ones randomly subsampled.
    """
    if per_task_target < 1:
        raise ValueError("per_task_target must be at least 1")
    g = rng.generator()
    plan = MixPlan()
    for task in tasks:
        if task.size == 0:
            raise ValueError(f"task {task.task_id!r} has no items")
        plan.entries += _expand(task, _resample(g, task.size, per_task_target))
    return plan


def stage2_plan(tasks: Sequence[TaskRecord], rng: RngState = RngState(0), t2i_task: str | None = T2I_TASK) -> MixPlan:
    """Weighted mix: each dataset contributes round(weight * size) items.

    With ``t2i_task`` set, that task is instead sized to match all other
    tasks combined.
    """
    g = rng.generator()
    plan = MixPlan()
    t2i = None
    for task in tasks:
        if task.task_id == t2i_task:
            t2i = task
            continue
        for ds, n in task.datasets:
            total = _round_half_up(task.weight * n)
            if n and total:
                idx = _resample(g, n, total)
                plan.entries += [(task.task_id, ds, int(i)) for i in idx]
    if t2i_task is not None:
        if t2i is None:
            raise ValueError(f"no {t2i_task!r} task to balance against")
        if t2i.size == 0:
            raise ValueError(f"task {t2i_task!r} has no items")
        others = len(plan.entries)
        if others:
            plan.entries += _expand(t2i, _resample(g, t2i.size, others))
    return plan


def epoch_order(plan: MixPlan, rng: RngState) -> list[tuple[str, str, int]]:
    if not plan.entries:
        raise ValueError("empty plan")
    order = rng.generator().permutation(len(plan.entries))
    return [plan.entries[i] for i in order]

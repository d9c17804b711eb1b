"""Small self-contained programs exercising each runtime construct.

Each demo builds a runtime, runs one scenario, and reports a few
``key=value`` lines. Every line is a pure function of the inputs: running
a demo under schedule perturbation (``seed``/``delay``) must never change
its output. The ``race`` demo is the deliberate exception that proves the
rule: it constructs a conflict and reports the canonical payload, which
is itself schedule-independent.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass

from .errors import DataRaceError
from .oracle import race_body
from .runtime import Reduction, Runtime, StaticSchedule


@dataclass(frozen=True)
class DemoReport:
    lines: tuple[str, ...]
    error: bool = False  # True when an intentional model error fired


def swap(seed: int | None = None, delay: float = 0.002) -> DemoReport:
    """Exchange two cells with no temporary: each task rewrites one cell
    from its spawn-time snapshot of the other."""
    rt = Runtime({"x": 1, "y": 2}, seed=seed, delay=delay)
    root = rt.root()
    first = root.spawn_task(lambda c: c.write("x", c.read("y")))
    second = root.spawn_task(lambda c: c.write("y", c.read("x")))
    root.taskwait(first)
    root.taskwait(second)
    lines = (f"x={root.read('x')}", f"y={root.read('y')}")
    rt.finish()
    return DemoReport(lines)


def pipeline(seed: int | None = None, delay: float = 0.002) -> DemoReport:
    """Chain tasks through handles: the second stage waits on the first
    even though it did not spawn it."""
    rt = Runtime({"base": 5}, seed=seed, delay=delay)
    root = rt.root()
    produce = root.spawn_task(lambda c: c.read("base") + 1)
    scale = root.spawn_task(lambda c: c.taskwait(produce) * 7)
    result = root.taskwait(scale)
    rt.finish()
    return DemoReport((f"result={result}",))


def reduce(
    members: int = 4, seed: int | None = None, delay: float = 0.002
) -> DemoReport:
    """Reductions folded at join: an integer sum and an order-sensitive
    string concatenation, both equal to the sequential fold in rank
    order."""
    rt = Runtime({"total": 0, "tag": ""}, seed=seed, delay=delay)
    root = rt.root()

    def body(ctx) -> None:
        ctx.contribute("total", sum(range(ctx.rank, 100, members)))
        ctx.contribute("tag", f"r{ctx.rank}")

    root.fork_join(
        [body] * members,
        reductions=[
            Reduction("total", 0, operator.add),
            Reduction("tag", "", operator.add),
        ],
    )
    lines = (f"total={root.read('total')}", f"tag={root.read('tag')}")
    rt.finish()
    return DemoReport(lines)


def ordered(
    iterations: int = 16,
    threads: int = 4,
    seed: int | None = None,
    delay: float = 0.002,
) -> DemoReport:
    """A cyclic parallel loop whose bodies append to one tuple inside
    ordered sections; the handoff chain forces ascending order."""
    rt = Runtime({"seq": ()}, seed=seed, delay=delay)
    root = rt.root()
    sched = StaticSchedule(iterations, chunk=1)

    def body(ctx) -> None:
        region = ctx.ordered_region(sched)
        for i in region.my_iterations():
            with region.section(i):
                ctx.write("seq", ctx.read("seq") + (i,))

    root.fork_join([body] * threads)
    seq = root.read("seq")
    lines = (
        f"length={len(seq)}",
        f"ascending={list(seq) == list(range(iterations))}",
        f"prefix={seq[:4]}",
    )
    rt.finish()
    return DemoReport(lines)


def tasks(seed: int | None = None, delay: float = 0.002) -> DemoReport:
    """Spawn-time snapshots and out-of-order waits: the first task keeps
    seeing the value from before the parent's overwrite, and handles can
    be waited in any order."""
    rt = Runtime({"g": 10}, seed=seed, delay=delay)
    root = rt.root()
    snap = root.spawn_task(lambda c: c.read("g"))
    root.write("g", 99)
    trio = [root.spawn_task(lambda c, k=k: k * k) for k in (1, 2, 3)]
    waited = (
        root.taskwait(trio[2]),
        root.taskwait(trio[0]),
        root.taskwait(trio[1]),
    )
    observed = root.taskwait(snap)
    lines = (
        f"snapshot={observed}",
        f"g={root.read('g')}",
        "waited=" + ",".join(str(v) for v in waited),
    )
    rt.finish()
    return DemoReport(lines)


def race(seed: int | None = None, delay: float = 0.002) -> DemoReport:
    """Two tasks overwrite the same cell with no channel between them.

    The conflict surfaces at the second wait, and its payload — the cell
    plus both version stamps — is identical under every schedule."""
    rt = Runtime({"r": 0}, seed=seed, delay=delay)
    root = rt.root()
    first = root.spawn_task(lambda c: c.write("r", 7))
    second = root.spawn_task(lambda c: c.write("r", 8))
    rev = {addr: name for name, addr in rt.names.items()}
    try:
        root.taskwait(first)
        root.taskwait(second)
    except DataRaceError as err:
        lines = ("error=DataRaceError", f"race={race_body(err.conflicts, rev)}")
        rt.finish()
        return DemoReport(lines, error=True)
    rt.finish()
    return DemoReport(("race=NONE",))


DEMOS = {
    "swap": swap,
    "pipeline": pipeline,
    "reduce": reduce,
    "ordered": ordered,
    "tasks": tasks,
    "race": race,
}

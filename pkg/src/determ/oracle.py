"""Exhaustive schedule enumeration for small scripted programs.

Two engines answer "what outcomes can this program produce?":

* :func:`enumerate_dc` explores every interleaving under the paired-channel
  model. It is written as an independent simulator: where workspaces
  compress causal history into per-writer version vectors, the simulator
  carries explicit sets of observed write events and decides staleness by
  set membership. Agreement between the two is therefore evidence, not
  tautology.
* :func:`enumerate_sc` explores the same program under a conventional
  shared store, where a release is a no-op and an acquire merely waits for
  its partner's event counter. The gap between the two outcome sets is
  what the paired-channel model buys.

:func:`run_on_runtime` executes the program on the real workspace/channel
stack under a seeded schedule perturbation, and :func:`check_program`
cross-checks many such runs against the enumeration.

Enumeration treats each scripted operation as atomic. That matches the
runtime, whose registry updates happen under one lock, with one knowing
exception: a release set that is simultaneously mis-paired with a blocked
acquire and aimed at several channels can report its (identical-kind)
violation with claimant lists of different widths depending on intra-event
timing. Such programs are doubly broken; the checker still reports a
pairing outcome for them but is only advertised as exact for programs
whose violations are intra-event unambiguous.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from importlib import resources
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import (
    DataRaceError,
    DeadlockError,
    LimitError,
    PairingError,
)
from .script import (
    AcquireOp,
    AllocOp,
    ReadOp,
    ReleaseOp,
    ScriptProgram,
    WriteOp,
    eval_expr,
    parse_script,
)
from .store import (
    INITIAL,
    ROOT_THREAD,
    Address,
    Conflict,
    VersionStamp,
    Workspace,
    global_addresses,
)
from .sync import ChannelRegistry, Endpoint, SyncLabel

#: Enumeration is only offered for programs this small.
MAX_THREADS = 4
MAX_OPS = 12  # per thread
DEFAULT_MAX_STATES = 200_000

_RUN_JOIN_TIMEOUT = 60.0


# ----------------------------------------------------------------------
# outcomes and canonical rendering
# ----------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Outcome:
    """One canonical program result.

    ``kind`` is STATE, RACE, PAIRING or DEADLOCK; ``body`` is a canonical
    rendering that two runs (or a run and an enumeration) can be compared
    on byte-for-byte.
    """

    kind: str
    body: str

    @property
    def text(self) -> str:
        return f"{self.kind} {self.body}" if self.body else self.kind

    def __str__(self) -> str:
        return self.text


def _reverse_names(program: ScriptProgram) -> dict[Address, str]:
    table = global_addresses(name for name, _ in program.globals)
    return {addr: name for name, addr in table.items()}


def state_body(view: Mapping[Address, Any], rev: Mapping[Address, str]) -> str:
    """Render a store as ``name=value`` pairs: globals first, then
    allocated cells by address."""
    ordered = sorted(view, key=lambda a: (a not in rev, a))
    parts = []
    for addr in ordered:
        label = rev.get(addr, str(addr))
        parts.append(f"{label}={view[addr]!r}")
    return " ".join(parts)


def race_body(
    conflicts: Sequence[Conflict], rev: Mapping[Address, str]
) -> str:
    """Render conflicting stamp pairs; the pair is sorted so the rendering
    does not depend on which side happened to be local."""
    parts = []
    for c in sorted(conflicts, key=lambda c: c.addr):
        lo, hi = sorted((c.local, c.incoming))
        parts.append(f"{rev.get(c.addr, str(c.addr))}:{lo}/{hi}")
    return " ".join(parts)


def pairing_body(violations: Iterable[Any]) -> str:
    return "; ".join(sorted({str(v) for v in violations}))


def deadlock_body(tids: Iterable[int]) -> str:
    return ",".join(str(t) for t in sorted(set(tids)))


def derive_outcome(
    view: Mapping[Address, Any],
    races: Mapping[int, Sequence[Conflict]],
    violations: Iterable[Any],
    doomed: Iterable[int],
    rev: Mapping[Address, str],
    crashes: Mapping[int, BaseException] | None = None,
) -> Outcome:
    """Fold one run's artifacts into a canonical outcome.

    Precedence: a data race outranks a pairing violation outranks a
    deadlock outranks plain state. The same rule is applied to enumerated
    and executed runs so the two routes stay comparable.
    """
    if crashes:
        raise crashes[min(crashes)]
    if races:
        return Outcome("RACE", race_body(races[min(races)], rev))
    violations = list(violations)
    if violations:
        return Outcome("PAIRING", pairing_body(violations))
    doomed = sorted(set(doomed))
    if doomed:
        return Outcome("DEADLOCK", deadlock_body(doomed))
    return Outcome("STATE", state_body(view, rev))


@dataclass(frozen=True)
class EnumerationResult:
    outcomes: tuple[Outcome, ...]
    states: int

    @property
    def unique(self) -> bool:
        return len(self.outcomes) == 1


def _check_limits(program: ScriptProgram) -> None:
    if program.nthreads > MAX_THREADS:
        raise LimitError(
            f"enumeration supports at most {MAX_THREADS} threads, "
            f"got {program.nthreads}"
        )
    if program.max_ops() > MAX_OPS:
        raise LimitError(
            f"enumeration supports at most {MAX_OPS} operations per thread, "
            f"got {program.max_ops()}"
        )


# ----------------------------------------------------------------------
# paired-channel simulator (observed-event-set semantics)
# ----------------------------------------------------------------------

# A release snapshot: (sorted (address, (event, value)) items, observed set)
_Snap = tuple[tuple[tuple[Address, tuple[VersionStamp, Any]], ...], frozenset]


class _SimThread:
    __slots__ = (
        "pc",
        "status",
        "locals",
        "store",
        "observed",
        "wseq",
        "nalloc",
        "nsync",
        "race",
    )

    def __init__(self, nops: int, init_store: dict[Address, tuple[VersionStamp, Any]]):
        self.pc = 0
        self.status = "run" if nops else "done"
        self.locals: dict[str, Any] = {}
        self.store = init_store
        self.observed: set[VersionStamp] = set()
        self.wseq = 0
        self.nalloc = 0
        self.nsync = 0
        self.race: tuple[Conflict, ...] = ()

    def clone(self) -> "_SimThread":
        c = _SimThread.__new__(_SimThread)
        c.pc = self.pc
        c.status = self.status
        c.locals = dict(self.locals)
        c.store = dict(self.store)
        c.observed = set(self.observed)
        c.wseq = self.wseq
        c.nalloc = self.nalloc
        c.nsync = self.nsync
        c.race = self.race
        return c

    def key(self) -> tuple:
        return (
            self.pc,
            self.status,
            tuple(sorted(self.locals.items())),
            tuple(sorted(self.store.items())),
            tuple(sorted(self.observed)),
            self.wseq,
            self.nalloc,
            self.nsync,
            self.race,
        )

    def seen(self, event: VersionStamp) -> bool:
        return event == INITIAL or event in self.observed


class _DcState:
    __slots__ = ("threads", "targeted", "rel_targets", "claims", "violations", "table")

    def __init__(self, program: ScriptProgram | None):
        if program is None:
            return
        table = global_addresses(name for name, _ in program.globals)
        self.table = table
        seed = {
            table[name]: (INITIAL, value) for name, value in program.globals
        }
        self.threads = [
            _SimThread(len(ops), dict(seed)) for ops in program.threads
        ]
        # acquire label -> {release label -> snapshot}
        self.targeted: dict[SyncLabel, dict[SyncLabel, _Snap]] = {}
        # release label -> every acquire label it was aimed at
        self.rel_targets: dict[SyncLabel, set[SyncLabel]] = {}
        # executed acquires -> the release labels they named
        self.claims: dict[SyncLabel, frozenset] = {}
        self.violations: tuple[str, ...] = ()

    def clone(self) -> "_DcState":
        c = _DcState(None)
        c.threads = [t.clone() for t in self.threads]
        c.targeted = {acq: dict(rels) for acq, rels in self.targeted.items()}
        c.rel_targets = {rel: set(ts) for rel, ts in self.rel_targets.items()}
        c.claims = dict(self.claims)
        c.violations = self.violations
        c.table = self.table
        return c

    def key(self) -> tuple:
        return (
            tuple(t.key() for t in self.threads),
            tuple(
                (acq, tuple(sorted(rels.items())))
                for acq, rels in sorted(self.targeted.items())
            ),
            tuple(
                (rel, tuple(sorted(ts)))
                for rel, ts in sorted(self.rel_targets.items())
            ),
            tuple(sorted(self.claims.items())),
            tuple(sorted(self.violations)),
        )

    # -- scheduling ------------------------------------------------------

    def runnable(self, program: ScriptProgram) -> list[int]:
        out = []
        for t, th in enumerate(self.threads):
            if th.status != "run":
                continue
            op = program.threads[t][th.pc]
            if isinstance(op, AcquireOp) and self._acq_mode(t, op) == "blocked":
                continue
            out.append(t)
        return out

    def _acq_mode(self, t: int, op: AcquireOp) -> str:
        """ready: all named releases deposited; error: the event would
        fault on a pairing check the moment it runs; blocked: otherwise."""
        th = self.threads[t]
        acq = SyncLabel(t, th.nsync + 1)
        named = frozenset(op.partners)
        pending = self.targeted.get(acq, {})
        if set(pending) - named:
            return "error"
        for rel in sorted(named):
            aimed = self.rel_targets.get(rel)
            if aimed and acq not in aimed:
                return "error"
        if all(rel in pending for rel in named):
            return "ready"
        return "blocked"

    # -- transition -------------------------------------------------------

    def step(self, program: ScriptProgram, t: int) -> "_DcState":
        st = self.clone()
        th = st.threads[t]
        op = program.threads[t][th.pc]
        if isinstance(op, ReadOp):
            th.locals[op.into] = th.store[st._resolve(t, op.cell, program)][1]
        elif isinstance(op, WriteOp):
            addr = st._resolve(t, op.cell, program)
            th.wseq += 1
            event = VersionStamp(t, th.wseq)
            th.store[addr] = (event, eval_expr(op.expr, th.locals))
            th.observed.add(event)
        elif isinstance(op, AllocOp):
            th.nalloc += 1
            base = len(program.globals) if t == ROOT_THREAD else 0
            addr = Address(t, base + th.nalloc)
            th.wseq += 1
            event = VersionStamp(t, th.wseq)
            th.store[addr] = (event, None)
            th.observed.add(event)
            th.locals[op.into] = addr
        elif isinstance(op, ReleaseOp):
            st._release(t, op)
        elif isinstance(op, AcquireOp):
            st._acquire(t, op)
        else:  # pragma: no cover - parser emits no other ops
            raise AssertionError(op)
        if th.status == "run":
            th.pc += 1
            if th.pc == len(program.threads[t]):
                th.status = "done"
        return st

    def _resolve(self, t: int, cell: str, program: ScriptProgram) -> Address:
        if cell in self.table:
            return self.table[cell]
        return self.threads[t].locals[cell]

    def _fault(self, t: int, err: PairingError) -> None:
        self.violations = self.violations + (str(err),)
        self.threads[t].status = "error"

    def _release(self, t: int, op: ReleaseOp) -> None:
        th = self.threads[t]
        th.nsync += 1
        rel = SyncLabel(t, th.nsync)
        snap: _Snap = (tuple(sorted(th.store.items())), frozenset(th.observed))
        self.rel_targets[rel] = set(op.partners)
        for target in op.partners:
            claimed = self.claims.get(target)
            if claimed is not None and rel not in claimed:
                self._fault(
                    t, PairingError("acquire", target, tuple(claimed) + (rel,))
                )
                return
            self.targeted.setdefault(target, {})[rel] = snap

    def _acquire(self, t: int, op: AcquireOp) -> None:
        th = self.threads[t]
        th.nsync += 1
        acq = SyncLabel(t, th.nsync)
        named = frozenset(op.partners)
        self.claims[acq] = named
        pending = self.targeted.get(acq, {})
        extras = set(pending) - named
        if extras:
            self._fault(t, PairingError("acquire", acq, tuple(named | extras)))
            return
        for rel in sorted(named):
            aimed = self.rel_targets.get(rel)
            if aimed and acq not in aimed:
                self._fault(t, PairingError("release", rel, tuple(aimed) + (acq,)))
                return
        snaps = {rel: pending.pop(rel) for rel in named}
        if acq in self.targeted and not self.targeted[acq]:
            del self.targeted[acq]
        for rel in sorted(named):
            conflicts = self._apply(th, snaps[rel])
            if conflicts:
                th.race = conflicts
                th.status = "error"
                return

    def _apply(self, th: _SimThread, snap: _Snap) -> tuple[Conflict, ...]:
        """Merge one snapshot: per cell, keep what the reader already saw,
        adopt what the sender provably postdates, and call everything else
        a conflict. All cells merge or none do."""
        items, sender_seen = snap
        adopt: list[tuple[Address, tuple[VersionStamp, Any]]] = []
        conflicts: list[Conflict] = []
        for addr, (event, value) in items:
            local = th.store.get(addr)
            if local is None:
                adopt.append((addr, (event, value)))
                continue
            if th.seen(event):
                continue
            if local[0] == INITIAL or local[0] in sender_seen:
                adopt.append((addr, (event, value)))
            else:
                conflicts.append(Conflict(addr, local[0], event))
        if conflicts:
            return tuple(conflicts)
        for addr, cell in adopt:
            th.store[addr] = cell
        th.observed |= sender_seen
        return ()

    # -- terminal ----------------------------------------------------------

    def outcome(self, program: ScriptProgram, rev: Mapping[Address, str]) -> Outcome:
        violations = list(self.violations)
        for target, pending in self.targeted.items():
            if target not in self.claims and len(pending) > 1:
                violations.append(
                    str(PairingError("acquire", target, tuple(pending)))
                )
        races = {
            t: th.race for t, th in enumerate(self.threads) if th.race
        }
        doomed = [t for t, th in enumerate(self.threads) if th.status == "run"]
        view = {addr: value for addr, (_, value) in self.threads[0].store.items()}
        return derive_outcome(view, races, violations, doomed, rev)


def enumerate_dc(
    program: ScriptProgram, max_states: int = DEFAULT_MAX_STATES
) -> EnumerationResult:
    """All outcomes reachable under any schedule of the paired-channel
    model, by depth-first search over whole-operation interleavings with
    state deduplication."""
    _check_limits(program)
    rev = _reverse_names(program)
    init = _DcState(program)
    seen = {init.key()}
    stack = [init]
    outcomes: set[Outcome] = set()
    while stack:
        st = stack.pop()
        frontier = st.runnable(program)
        if not frontier:
            outcomes.add(st.outcome(program, rev))
            continue
        for t in frontier:
            nxt = st.step(program, t)
            k = nxt.key()
            if k in seen:
                continue
            if len(seen) >= max_states:
                raise LimitError(f"state budget exceeded ({max_states})")
            seen.add(k)
            stack.append(nxt)
    return EnumerationResult(tuple(sorted(outcomes)), len(seen))


# ----------------------------------------------------------------------
# sequentially consistent simulator
# ----------------------------------------------------------------------


class _ScState:
    __slots__ = ("pcs", "locals", "nallocs", "nsyncs", "shared", "table")

    def __init__(self, program: ScriptProgram | None):
        if program is None:
            return
        n = program.nthreads
        table = global_addresses(name for name, _ in program.globals)
        self.table = table
        self.pcs = [0] * n
        self.locals: list[dict[str, Any]] = [{} for _ in range(n)]
        self.nallocs = [0] * n
        self.nsyncs = [0] * n
        self.shared: dict[Address, Any] = {
            table[name]: value for name, value in program.globals
        }

    def clone(self) -> "_ScState":
        c = _ScState(None)
        c.pcs = list(self.pcs)
        c.locals = [dict(d) for d in self.locals]
        c.nallocs = list(self.nallocs)
        c.nsyncs = list(self.nsyncs)
        c.shared = dict(self.shared)
        c.table = self.table
        return c

    def key(self) -> tuple:
        return (
            tuple(self.pcs),
            tuple(tuple(sorted(d.items())) for d in self.locals),
            tuple(self.nallocs),
            tuple(self.nsyncs),
            tuple(sorted(self.shared.items())),
        )

    def runnable(self, program: ScriptProgram) -> list[int]:
        out = []
        for t in range(program.nthreads):
            ops = program.threads[t]
            if self.pcs[t] >= len(ops):
                continue
            op = ops[self.pcs[t]]
            if isinstance(op, AcquireOp) and not all(
                self.nsyncs[lab.thread] >= lab.seq for lab in op.partners
            ):
                continue
            out.append(t)
        return out

    def step(self, program: ScriptProgram, t: int) -> "_ScState":
        st = self.clone()
        op = program.threads[t][st.pcs[t]]
        table = st.table
        if isinstance(op, ReadOp):
            addr = table.get(op.cell) or st.locals[t][op.cell]
            st.locals[t][op.into] = st.shared[addr]
        elif isinstance(op, WriteOp):
            addr = table.get(op.cell) or st.locals[t][op.cell]
            st.shared[addr] = eval_expr(op.expr, st.locals[t])
        elif isinstance(op, AllocOp):
            st.nallocs[t] += 1
            base = len(program.globals) if t == ROOT_THREAD else 0
            addr = Address(t, base + st.nallocs[t])
            st.shared[addr] = None
            st.locals[t][op.into] = addr
        elif isinstance(op, (ReleaseOp, AcquireOp)):
            # Under the flat model sync events only advance the counter an
            # acquire waits on; no payload moves because memory is shared.
            st.nsyncs[t] += 1
        st.pcs[t] += 1
        return st

    def outcome(self, program: ScriptProgram, rev: Mapping[Address, str]) -> Outcome:
        blocked = [
            t
            for t in range(program.nthreads)
            if self.pcs[t] < len(program.threads[t])
        ]
        if blocked:
            return Outcome("DEADLOCK", deadlock_body(blocked))
        return Outcome("STATE", state_body(self.shared, rev))


def enumerate_sc(
    program: ScriptProgram, max_states: int = DEFAULT_MAX_STATES
) -> EnumerationResult:
    """All outcomes of the same script over a single shared store."""
    _check_limits(program)
    rev = _reverse_names(program)
    init = _ScState(program)
    seen = {init.key()}
    stack = [init]
    outcomes: set[Outcome] = set()
    while stack:
        st = stack.pop()
        frontier = st.runnable(program)
        if not frontier:
            outcomes.add(st.outcome(program, rev))
            continue
        for t in frontier:
            nxt = st.step(program, t)
            k = nxt.key()
            if k in seen:
                continue
            if len(seen) >= max_states:
                raise LimitError(f"state budget exceeded ({max_states})")
            seen.add(k)
            stack.append(nxt)
    return EnumerationResult(tuple(sorted(outcomes)), len(seen))


# ----------------------------------------------------------------------
# execution on the real stack
# ----------------------------------------------------------------------


def _perturb_hook(seed: int | None, tid: int, delay: float) -> Callable[[], None] | None:
    if seed is None or delay <= 0:
        return None
    import random
    import time

    rng = random.Random(seed * 1_000_003 + tid * 7919 + 17)

    def hook() -> None:
        time.sleep(rng.random() * delay)

    return hook


def run_on_runtime(
    program: ScriptProgram, seed: int | None = None, delay: float = 0.002
) -> Outcome:
    """Execute the script on real workspaces, channels, and OS threads.

    Every thread sleeps a seeded pseudo-random amount before each
    operation, so different seeds exercise genuinely different schedules.
    The result is folded by the same rule as the enumerators.
    """
    registry = ChannelRegistry()
    rev = _reverse_names(program)
    table = global_addresses(name for name, _ in program.globals)
    init = dict(program.globals)
    workspaces = {t: Workspace(t, init) for t in range(program.nthreads)}
    errors: dict[int, BaseException] = {}
    lock = threading.Lock()
    for t in range(program.nthreads):
        registry.register(t)

    def runner(tid: int) -> None:
        ws = workspaces[tid]
        ep = Endpoint(registry, tid)
        hook = _perturb_hook(seed, tid, delay)
        locals_: dict[str, Any] = {}

        def resolve(cell: str) -> Address:
            return table.get(cell) or locals_[cell]

        try:
            for op in program.threads[tid]:
                if hook is not None:
                    hook()
                if isinstance(op, ReadOp):
                    locals_[op.into] = ws.read(resolve(op.cell))
                elif isinstance(op, WriteOp):
                    ws.write(resolve(op.cell), eval_expr(op.expr, locals_))
                elif isinstance(op, AllocOp):
                    locals_[op.into] = ws.alloc(None)
                elif isinstance(op, ReleaseOp):
                    ep.release_set(ws, op.partners)
                elif isinstance(op, AcquireOp):
                    ep.acquire_set(ws, op.partners)
        except BaseException as err:  # noqa: BLE001 - collected for the verdict
            with lock:
                errors[tid] = err
        finally:
            registry.mark_done(tid)

    threads = [
        threading.Thread(target=runner, args=(t,), name=f"determ-sim-{t}")
        for t in range(program.nthreads)
    ]
    for th in threads:
        th.start()
    for th in threads:
        th.join(timeout=_RUN_JOIN_TIMEOUT)
        if th.is_alive():  # pragma: no cover - runtime bug guard
            raise RuntimeError(f"{th.name} failed to settle")
    registry.audit()

    races = {
        t: e.conflicts for t, e in errors.items() if isinstance(e, DataRaceError)
    }
    crashes = {
        t: e
        for t, e in errors.items()
        if not isinstance(e, (DataRaceError, PairingError, DeadlockError))
    }
    view = {addr: cell.value for addr, cell in workspaces[0].cells.items()}
    return derive_outcome(
        view,
        races,
        registry.violations(),
        registry.doomed(),
        rev,
        crashes,
    )


# ----------------------------------------------------------------------
# cross-checking
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    """Enumeration versus many perturbed executions of one program."""

    program: str
    dc: EnumerationResult
    trials: int
    trial_outcomes: tuple[Outcome, ...]  # distinct, sorted

    @property
    def deterministic(self) -> bool:
        return self.dc.unique and self.trial_outcomes == self.dc.outcomes


def check_program(
    program: ScriptProgram,
    trials: int = 100,
    seed: int = 0,
    delay: float = 0.002,
    max_states: int = DEFAULT_MAX_STATES,
) -> CheckReport:
    dc = enumerate_dc(program, max_states)
    seen: set[Outcome] = set()
    for i in range(trials):
        seen.add(run_on_runtime(program, seed=seed + i, delay=delay))
    return CheckReport(
        program=program.name,
        dc=dc,
        trials=trials,
        trial_outcomes=tuple(sorted(seen)),
    )


# ----------------------------------------------------------------------
# bundled example programs
# ----------------------------------------------------------------------


def corpus_names() -> list[str]:
    root = resources.files("determ") / "corpus"
    return sorted(
        p.name[: -len(".txt")] for p in root.iterdir() if p.name.endswith(".txt")
    )


def load_corpus(name: str) -> ScriptProgram:
    root = resources.files("determ") / "corpus"
    path = root / f"{name}.txt"
    return parse_script(path.read_text(), name=name)

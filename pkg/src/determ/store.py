"""Thread-confined versioned workspaces over a logically shared store.

Each logical thread owns exactly one Workspace: a private map from
addresses to stamped values plus a knowledge vector summarizing every
write event the thread has causally observed. Workspaces never share
memory; state moves between them only as Diffs. A release extracts the
sender's latest-write map, an acquire applies it cell by cell with a
deterministic three-way rule:

* incoming stamp already covered by my knowledge: keep the local cell;
* local stamp covered by the sender's knowledge (the initial stamp is
  covered by everything): adopt the incoming cell;
* neither covers the other: the writes were concurrent, raise
  DataRaceError for the full conflict set and change nothing.

Values are treated as opaque immutable data; equality of final states is
structural equality of (stamp, value) maps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping

from .errors import ConfigError, DataRaceError, UnallocatedError

# The root thread owns the global namespace.
ROOT_THREAD = 0

# Writer id reserved for the initial program state.
_INITIAL_WRITER = -1


@dataclass(frozen=True, order=True)
class Address:
    """Location of one cell: owning thread plus per-owner slot number."""

    owner: int
    slot: int

    def __str__(self) -> str:
        return f"@{self.owner}.{self.slot}"


@dataclass(frozen=True, order=True)
class VersionStamp:
    """Identity of one write event: writing thread plus its write counter."""

    writer: int
    seq: int

    def __str__(self) -> str:
        return f"{self.writer}.{self.seq}"


#: Distinguished stamp on cells nobody has written yet. Its seq of zero
#: makes it covered by every knowledge vector, i.e. causally below all
#: real writes.
INITIAL = VersionStamp(_INITIAL_WRITER, 0)

#: Knowledge vector: writer thread id -> highest write seq observed.
KnowledgeVector = dict

def covers(knowledge: Mapping[int, int], stamp: VersionStamp) -> bool:
    """True when the write named by ``stamp`` is already known."""
    return stamp.seq <= knowledge.get(stamp.writer, 0)


def merge_knowledge(a: Mapping[int, int], b: Mapping[int, int]) -> dict[int, int]:
    """Pointwise maximum of two knowledge vectors."""
    out = dict(a)
    for writer, seq in b.items():
        if seq > out.get(writer, 0):
            out[writer] = seq
    return out


@dataclass(frozen=True)
class Conflict:
    """One racy cell: its address and the two unordered stamps."""

    addr: Address
    local: VersionStamp
    incoming: VersionStamp


@dataclass(frozen=True)
class Cell:
    stamp: VersionStamp
    value: Any


@dataclass(frozen=True)
class Diff:
    """Immutable snapshot a release hands to an acquire.

    ``writes`` holds the sender's full latest-write map, one entry per
    address it knows (cells still carrying the initial stamp included, so
    a fresh receiver learns the whole picture). ``sender_knowledge`` is a
    copy of the sender's knowledge vector at extraction time.
    """

    sender_knowledge: dict[int, int]
    writes: dict[Address, Cell]


def global_addresses(names: Iterable[str]) -> dict[str, Address]:
    """Deterministic name -> address map for the global namespace.

    Globals live in the root thread's namespace at slots 1..k assigned in
    lexicographic name order, so every workspace derives the same map.
    """
    table = {}
    for index, name in enumerate(sorted(names)):
        table[name] = Address(ROOT_THREAD, index + 1)
    return table


class Workspace:
    """Private store of one logical thread."""

    def __init__(
        self,
        owner: int,
        globals: Mapping[str, Any] | Iterable[tuple[str, Any]] = (),
    ) -> None:
        if owner < 0:
            raise ConfigError(f"thread id must be non-negative, got {owner}")
        pairs = list(globals.items()) if isinstance(globals, Mapping) else list(globals)
        seen: set[str] = set()
        for name, _ in pairs:
            if name in seen:
                raise ConfigError(f"duplicate global name {name!r}")
            seen.add(name)
        self.owner = owner
        self.cells: dict[Address, Cell] = {}
        self.knowledge: dict[int, int] = {}
        self._write_counter = 0
        # Global slots are burned out of the root's allocation sequence so
        # root allocations can never collide with named globals.
        self._alloc_counter = len(pairs) if owner == ROOT_THREAD else 0
        table = global_addresses(name for name, _ in pairs)
        by_name = dict(pairs)
        for name, addr in table.items():
            self.cells[addr] = Cell(INITIAL, by_name[name])

    # ------------------------------------------------------------------
    # data operations
    # ------------------------------------------------------------------

    def read(self, addr: Address) -> Any:
        cell = self.cells.get(addr)
        if cell is None:
            raise UnallocatedError(addr)
        return cell.value

    def write(self, addr: Address, value: Any) -> VersionStamp:
        """Overwrite a cell with a fresh stamp by this workspace's owner."""
        if addr not in self.cells:
            raise UnallocatedError(addr)
        self._write_counter += 1
        stamp = VersionStamp(self.owner, self._write_counter)
        self.cells[addr] = Cell(stamp, value)
        self.knowledge[self.owner] = self._write_counter
        return stamp

    def alloc(self, value: Any = None) -> Address:
        """Create a fresh private cell; counts as a write by the owner."""
        self._alloc_counter += 1
        addr = Address(self.owner, self._alloc_counter)
        assert addr not in self.cells, "allocation slots never repeat"
        self._write_counter += 1
        self.cells[addr] = Cell(VersionStamp(self.owner, self._write_counter), value)
        self.knowledge[self.owner] = self._write_counter
        return addr

    # ------------------------------------------------------------------
    # diff exchange
    # ------------------------------------------------------------------

    def extract_diff(self) -> Diff:
        """Snapshot everything this workspace knows, for a release."""
        return Diff(dict(self.knowledge), dict(self.cells))

    def apply_diff(self, diff: Diff) -> None:
        """Merge an incoming diff, all cells or none.

        The conflict scan walks addresses in canonical ascending order so
        a DataRaceError payload is identical no matter which schedule
        produced it. On conflict the workspace is left untouched.
        """
        adopt: list[tuple[Address, Cell]] = []
        conflicts: list[Conflict] = []
        for addr in sorted(diff.writes):
            incoming = diff.writes[addr]
            local = self.cells.get(addr)
            if local is None:
                # Never-seen address: nothing local to defend.
                adopt.append((addr, incoming))
                continue
            if covers(self.knowledge, incoming.stamp):
                continue  # stale or already merged; keep local
            if covers(diff.sender_knowledge, local.stamp):
                adopt.append((addr, incoming))
            else:
                conflicts.append(Conflict(addr, local.stamp, incoming.stamp))
        if conflicts:
            raise DataRaceError(tuple(conflicts))
        for addr, cell in adopt:
            self.cells[addr] = cell
        self.knowledge = merge_knowledge(self.knowledge, diff.sender_knowledge)

    # ------------------------------------------------------------------
    # introspection helpers
    # ------------------------------------------------------------------

    def addresses(self) -> Iterator[Address]:
        return iter(sorted(self.cells))

    def state_bytes(self) -> bytes:
        """Canonical serialization of visible state.

        Covers cells and knowledge only; private counters are excluded so
        two workspaces that would behave identically compare equal.
        """
        cells = [
            (addr.owner, addr.slot, cell.stamp.writer, cell.stamp.seq, repr(cell.value))
            for addr, cell in sorted(self.cells.items())
        ]
        knowledge = sorted((w, s) for w, s in self.knowledge.items() if s > 0)
        return repr((cells, knowledge)).encode()

    def check_invariants(self) -> None:
        """Assert internal consistency; used by tests."""
        assert self.knowledge.get(self.owner, 0) == self._write_counter
        for addr, cell in self.cells.items():
            assert covers(self.knowledge, cell.stamp), (
                f"cell {addr} stamped {cell.stamp} outside knowledge"
            )
        for writer, seq in self.knowledge.items():
            assert seq >= 0 and writer >= _INITIAL_WRITER

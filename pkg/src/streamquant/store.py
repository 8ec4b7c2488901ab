"""Two-tier storage simulation with exact accounting of batched disk traffic.

Main memory is the caller's Python state; "disk" is an address -> blob table
behind this module. The accounting rules are the whole point:

* a read or write batch costs one round no matter how many addresses it
  names; an empty batch costs nothing,
* transfer volume is counted in 8-byte words, each blob rounded up,
* frees ride along with a write batch when handed to ``write_batch``,
  otherwise a bare ``free`` is its own write round.

Addresses are plain ints. The address space is split into regions so data
structures can derive related addresses arithmetically instead of chasing
pointers: region 0 backs ``alloc``, higher regions are handed out whole via
``alloc_region`` and populated with ``claim``.

Updates are bracketed by ``begin_update``/``end_update`` which snapshot the
ledger and append a per-update report to its history. Reads are also legal
outside a window (the re-ranking path at query time); they count toward the
global ledger only.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

WORD_BYTES = 8

# Region 0 is the plain allocation pool; claimed addresses live above it.
REGION_SHIFT = 44
REGION_SIZE = 1 << REGION_SHIFT


class StoreError(Exception):
    pass


class DeadAddressError(StoreError):
    """Raised when touching an address that is not live."""


class CapacityError(StoreError):
    pass


class WindowError(StoreError):
    """Update-window misuse: nesting or end without begin."""


def blob_words(blob: bytes) -> int:
    """Size of a blob in machine words, rounded up."""
    return (len(blob) + WORD_BYTES - 1) // WORD_BYTES


@dataclass(frozen=True)
class IoReport:
    """Ledger delta for one update window."""

    update_idx: int
    read_rounds: int
    write_rounds: int
    words_read: int
    words_written: int
    # per-round detail, in round order
    read_addr_counts: tuple[int, ...] = ()
    read_round_words: tuple[int, ...] = ()
    write_addr_counts: tuple[int, ...] = ()
    write_round_words: tuple[int, ...] = ()


@dataclass
class IoLedger:
    read_rounds: int = 0
    write_rounds: int = 0
    words_read: int = 0
    words_written: int = 0
    per_update_history: list[IoReport] = field(default_factory=list)

    def totals(self) -> tuple[int, int, int, int]:
        return (self.read_rounds, self.write_rounds, self.words_read, self.words_written)


class _MemoryBackend:
    def __init__(self):
        self._blobs: dict[int, bytes] = {}

    def __contains__(self, addr):
        return addr in self._blobs

    def __len__(self):
        return len(self._blobs)

    def get(self, addr):
        return self._blobs[addr]

    def put(self, addr, blob):
        self._blobs[addr] = blob

    def drop(self, addr):
        del self._blobs[addr]


class _FileBackend:
    """Append-only file with an in-memory offset index; one file, no compaction."""

    def __init__(self, path):
        self._path = path
        self._file = open(path, "w+b")
        self._index: dict[int, tuple[int, int]] = {}

    def __contains__(self, addr):
        return addr in self._index

    def __len__(self):
        return len(self._index)

    def get(self, addr):
        offset, length = self._index[addr]
        self._file.seek(offset)
        return self._file.read(length)

    def put(self, addr, blob):
        self._file.seek(0, io.SEEK_END)
        offset = self._file.tell()
        self._file.write(blob)
        self._index[addr] = (offset, len(blob))

    def drop(self, addr):
        del self._index[addr]

    def close(self):
        self._file.close()


class DiskStore:
    """Address -> blob table with round/word accounting.

    ``path=None`` keeps blobs in a dict; a path switches to a single
    offset-indexed file. Ledger semantics are identical in both modes.
    ``max_live`` caps the number of live addresses.
    """

    def __init__(self, path: str | os.PathLike | None = None, max_live: int | None = None):
        self._backend = _FileBackend(path) if path is not None else _MemoryBackend()
        self._max_live = max_live
        self._next_plain = 0
        self._next_region = 1
        self.ledger = IoLedger()
        self._window = None  # per-window detail lists while a window is open

    # -- allocation ---------------------------------------------------

    def _check_capacity(self):
        if self._max_live is not None and len(self._backend) >= self._max_live:
            raise CapacityError(f"store capacity exhausted ({self._max_live} live addresses)")

    def alloc(self) -> int:
        """Return a fresh address mapped to an empty blob. Never reuses ids."""
        self._check_capacity()
        addr = self._next_plain
        if addr >= REGION_SIZE:
            raise CapacityError("plain allocation pool exhausted")
        self._next_plain += 1
        self._backend.put(addr, b"")
        return addr

    def alloc_region(self) -> int:
        """Reserve a fresh address region; returns its base address.

        Addresses ``base + k`` belong to the caller and become live via
        ``claim``. Region math lets sibling/parent addresses be computed
        instead of read.
        """
        base = self._next_region << REGION_SHIFT
        self._next_region += 1
        return base

    def claim(self, addr: int):
        """Mark a region address live (empty blob). Error if already live."""
        if addr < REGION_SIZE:
            raise StoreError(f"claim outside a reserved region: {addr}")
        if addr in self._backend:
            raise StoreError(f"address {addr} already live")
        self._check_capacity()
        self._backend.put(addr, b"")

    def is_live(self, addr: int) -> bool:
        return addr in self._backend

    def live_count(self) -> int:
        return len(self._backend)

    # -- batched I/O ----------------------------------------------------

    def read_batch(self, addrs) -> list[bytes]:
        """Fetch blobs for ``addrs`` in order; one round if non-empty."""
        addrs = list(addrs)
        if not addrs:
            return []
        blobs = []
        words = 0
        if isinstance(self._backend, _MemoryBackend):
            table = self._backend._blobs
            for a in addrs:
                blob = table.get(a)
                if blob is None:
                    raise DeadAddressError(f"read of dead address {a}")
                blobs.append(blob)
                words += (len(blob) + WORD_BYTES - 1) // WORD_BYTES
        else:
            for a in addrs:
                if a not in self._backend:
                    raise DeadAddressError(f"read of dead address {a}")
                blob = self._backend.get(a)
                blobs.append(blob)
                words += (len(blob) + WORD_BYTES - 1) // WORD_BYTES
        self.ledger.read_rounds += 1
        self.ledger.words_read += words
        if self._window is not None:
            self._window["read_addr_counts"].append(len(addrs))
            self._window["read_round_words"].append(words)
        return blobs

    def read_map(self, addrs) -> dict[int, bytes]:
        """One read round returning ``{addr: blob}`` with duplicates collapsed."""
        unique = list(dict.fromkeys(addrs))
        return dict(zip(unique, self.read_batch(unique)))

    def write_batch(self, entries, frees=()):
        """Overwrite all listed addresses and apply frees atomically.

        One round if anything is listed. Duplicate targets (across writes
        and frees) are rejected: the batch result would be ambiguous.
        """
        entries = list(entries)
        frees = list(frees)
        if not entries and not frees:
            return
        seen = set()
        for a, _ in entries:
            if a in seen:
                raise StoreError(f"duplicate address {a} in write batch")
            seen.add(a)
        for a in frees:
            if a in seen:
                raise StoreError(f"address {a} both written and freed in one batch")
            seen.add(a)
        for a, blob in entries:
            if a not in self._backend:
                raise DeadAddressError(f"write to dead address {a}")
            if not isinstance(blob, (bytes, bytearray, memoryview)):
                raise TypeError("blob must be bytes-like")
        for a in frees:
            if a not in self._backend:
                raise DeadAddressError(f"free of dead address {a}")
        words = 0
        for a, blob in entries:
            blob = bytes(blob)
            self._backend.put(a, blob)
            words += (len(blob) + WORD_BYTES - 1) // WORD_BYTES
        for a in frees:
            self._backend.drop(a)
        self.ledger.write_rounds += 1
        self.ledger.words_written += words
        if self._window is not None:
            self._window["write_addr_counts"].append(len(entries) + len(frees))
            self._window["write_round_words"].append(words)

    def free(self, addr: int):
        """Kill an address as its own write round."""
        self.write_batch([], [addr])

    # -- update windows -------------------------------------------------

    def begin_update(self):
        if self._window is not None:
            raise WindowError("update window already open")
        self._window = {
            "base": self.ledger.totals(),
            "read_addr_counts": [],
            "read_round_words": [],
            "write_addr_counts": [],
            "write_round_words": [],
        }

    def end_update(self) -> IoReport:
        if self._window is None:
            raise WindowError("end_update without begin_update")
        w = self._window
        self._window = None
        r0, w0, wr0, ww0 = w["base"]
        report = IoReport(
            update_idx=len(self.ledger.per_update_history),
            read_rounds=self.ledger.read_rounds - r0,
            write_rounds=self.ledger.write_rounds - w0,
            words_read=self.ledger.words_read - wr0,
            words_written=self.ledger.words_written - ww0,
            read_addr_counts=tuple(w["read_addr_counts"]),
            read_round_words=tuple(w["read_round_words"]),
            write_addr_counts=tuple(w["write_addr_counts"]),
            write_round_words=tuple(w["write_round_words"]),
        )
        self.ledger.per_update_history.append(report)
        return report

    def in_window(self) -> bool:
        return self._window is not None

    # -- reporting --------------------------------------------------------

    def dump_ledger_csv(self, path_or_file):
        """Write per-update history as CSV."""
        own = isinstance(path_or_file, (str, os.PathLike))
        f = open(path_or_file, "w") if own else path_or_file
        try:
            f.write("update_idx,read_rounds,write_rounds,words_read,words_written\n")
            for r in self.ledger.per_update_history:
                f.write(f"{r.update_idx},{r.read_rounds},{r.write_rounds},{r.words_read},{r.words_written}\n")
        finally:
            if own:
                f.close()


class RecordTable:
    """Fixed-stride record ranges on a store region.

    Each record owns ``slots`` consecutive addresses so sub-fields can be
    rewritten independently without reading the rest of the record. Record
    bases are never reused.
    """

    def __init__(self, store: DiskStore, slots: int):
        self.store = store
        self.slots = slots
        self._base = store.alloc_region()
        self._next = 0
        self._bases: dict[int, int] = {}  # record key -> base address

    def add(self, key: int) -> int:
        """Claim a fresh record range for ``key``; returns its base address."""
        if key in self._bases:
            raise KeyError(f"record {key} already present")
        base = self._base + self._next * self.slots
        self._next += 1
        for s in range(self.slots):
            self.store.claim(base + s)
        self._bases[key] = base
        return base

    def base(self, key: int) -> int:
        return self._bases[key]

    def slot(self, key: int, index: int) -> int:
        if not 0 <= index < self.slots:
            raise IndexError(index)
        return self._bases[key] + index

    def remove(self, key: int) -> list[int]:
        """Forget ``key`` and return the addresses to free (caller batches them)."""
        base = self._bases.pop(key)
        return [base + s for s in range(self.slots)]

    def __contains__(self, key):
        return key in self._bases

    def __len__(self):
        return len(self._bases)

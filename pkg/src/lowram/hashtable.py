"""Linear-probing hash table keyed by feature index with packed value columns.

Keys live in a signed 64-bit column (``-1`` marks an empty slot); each value
column is a typed ``array.array`` so a 16-bit coefficient really occupies two
bytes and an 8-bit counter one byte.
"""

from __future__ import annotations

from array import array

EMPTY = -1
_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_MIN_BITS = 4


class CoordinateTable:
    """Open-addressing map ``feature index -> row of packed columns``.

    ``columns`` maps a column name to ``(typecode, default)``. Lookups return a
    slot number; callers read and write ``table.column(name)[slot]`` directly.
    """

    def __init__(self, columns: dict[str, tuple[str, float]], capacity_bits: int = _MIN_BITS):
        self._spec = dict(columns)
        self._bits = max(_MIN_BITS, capacity_bits)
        self._size = 0
        self._allocate(1 << self._bits)

    def _allocate(self, capacity: int) -> None:
        self.keys = array("q", [EMPTY]) * capacity
        self.cols = {
            name: array(code, [default]) * capacity for name, (code, default) in self._spec.items()
        }
        self._shift = 64 - self._bits
        self._mask = capacity - 1

    def __len__(self):
        return self._size

    @property
    def capacity(self) -> int:
        return self._mask + 1

    def column(self, name: str) -> array:
        return self.cols[name]

    def _home(self, key: int) -> int:
        return ((key * _GOLDEN) & _MASK64) >> self._shift

    def find(self, key: int) -> int:
        """Slot holding ``key`` or -1 if absent."""
        keys = self.keys
        mask = self._mask
        slot = ((key * _GOLDEN) & _MASK64) >> self._shift
        while True:
            k = keys[slot]
            if k == key:
                return slot
            if k == EMPTY:
                return -1
            slot = (slot + 1) & mask

    def insert(self, key: int) -> int:
        """Slot for ``key``, creating a default row if needed."""
        if key < 0:
            raise KeyError(f"feature index must be non-negative, got {key}")
        keys = self.keys
        mask = self._mask
        slot = ((key * _GOLDEN) & _MASK64) >> self._shift
        while True:
            k = keys[slot]
            if k == key:
                return slot
            if k == EMPTY:
                break
            slot = (slot + 1) & mask
        # keep load factor at or below 1/2
        if 2 * (self._size + 1) > self.capacity:
            self._grow()
            return self.insert(key)
        keys[slot] = key
        self._size += 1
        return slot

    def _grow(self) -> None:
        old_keys = self.keys
        old_cols = self.cols
        self._bits += 1
        self._allocate(1 << self._bits)
        keys = self.keys
        mask = self._mask
        names = list(old_cols)
        for old_slot, key in enumerate(old_keys):
            if key == EMPTY:
                continue
            slot = self._home(key)
            while keys[slot] != EMPTY:
                slot = (slot + 1) & mask
            keys[slot] = key
            for name in names:
                self.cols[name][slot] = old_cols[name][old_slot]

    def items(self):
        """``(key, slot)`` pairs in ascending key order."""
        pairs = [(k, s) for s, k in enumerate(self.keys) if k != EMPTY]
        pairs.sort()
        return pairs

    def nbytes(self) -> int:
        """Bytes held by keys and value columns (capacity, not occupancy)."""
        total = self.keys.itemsize * len(self.keys)
        for col in self.cols.values():
            total += col.itemsize * len(col)
        return total

"""Fenwick (binary indexed) tree over non-negative integer weights.

Supports point updates, prefix sums and weighted index search in
O(log n). Used by the order book to pick a unit order uniformly among
all cancellable units.
"""


class FenwickTree:
    """Cumulative frequency table over slots ``0 .. size-1``."""

    def __init__(self, size):
        if size < 1:
            raise ValueError("size must be positive")
        self.size = size
        self._tree = [0] * (size + 1)
        top = 1
        while top * 2 <= size:
            top *= 2
        self._top = top
        self.total = 0

    @classmethod
    def from_weights(cls, weights):
        tree = cls(len(weights))
        t = tree._tree
        for i, w in enumerate(weights, start=1):
            t[i] += int(w)
            j = i + (i & -i)
            if j <= tree.size:
                t[j] += t[i]
        tree.total = sum(int(w) for w in weights)
        return tree

    def add(self, slot, delta):
        j = slot + 1
        n = self.size
        t = self._tree
        while j <= n:
            t[j] += delta
            j += j & -j
        self.total += delta

    def prefix(self, slot):
        """Sum of weights in slots ``0 .. slot`` inclusive."""
        j = slot + 1
        s = 0
        t = self._tree
        while j > 0:
            s += t[j]
            j -= j & -j
        return s

    def weight(self, slot):
        return self.prefix(slot) - (self.prefix(slot - 1) if slot > 0 else 0)

    def find(self, k):
        """Slot holding the ``k``-th unit (0-based), i.e. the smallest slot
        whose prefix sum exceeds ``k``."""
        if not 0 <= k < self.total:
            raise IndexError("unit index out of range")
        pos = 0
        step = self._top
        t = self._tree
        n = self.size
        while step:
            nxt = pos + step
            if nxt <= n and t[nxt] <= k:
                pos = nxt
                k -= t[nxt]
            step >>= 1
        return pos

"""Simulated trusted execution environment.

TrustedRuntime owns the key material. It turns an obfuscated ID into the
physical byte addresses of the data item in untrusted memory:

    clear_id  = r mod sk                          (recover_clear_id)
    physical  = page base + H(counter[page], offset)   (physical_offset)

H(counter, .) is a pseudo-random permutation of the page offsets drawn from
a Philox stream seeded with (perm_seed, page, counter), so every counter
value gets an independent permutation. Every n accesses on average the
pages touched since the previous shuffle are re-permuted under counter + 1.
With statement shuffling on, the pages a statement touched are also
re-permuted once it finishes, before the next statement resolves anything.
Nothing that leaves this module through the evaluator carries sk,
perm_seed or clear IDs.
"""

import logging
import threading
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from decorrelator.core.values import encode
from decorrelator.errors import ForeignIdError, KeyMaterialError
from decorrelator.models import AccessStats, FlatLayout, KeyMaterial

logger = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1


def recover_clear_id(sk: int, r: int, data_size: Optional[int] = None) -> int:
    """Clear ID of obfuscated ID r: its residue modulo sk."""
    if sk <= 0:
        raise KeyMaterialError("sk must be positive")
    if r < 0:
        raise ForeignIdError(f"obfuscated ID {r} is negative")
    clear_id = r % sk
    if data_size is not None and clear_id >= data_size:
        raise ForeignIdError(f"obfuscated ID {r} does not belong to this program")
    return clear_id


@lru_cache(maxsize=256)
def page_permutation(perm_seed: int, page: int, counter: int, page_bits: int) -> np.ndarray:
    """H(counter, .) for one page: a permutation of range(2**page_bits)."""
    entropy = [int(perm_seed) & _SEED_MASK, int(page), int(counter)]
    bitgen = np.random.Philox(np.random.SeedSequence(entropy))
    perm = np.random.Generator(bitgen).permutation(1 << page_bits)
    perm.flags.writeable = False
    return perm


@lru_cache(maxsize=64)
def identity_permutation(perm_seed: int, page: int, counter: int, page_bits: int) -> np.ndarray:
    """Stand-in for page_permutation in tests that want physical == clear."""
    perm = np.arange(1 << page_bits)
    perm.flags.writeable = False
    return perm


class PhysicalMemory:
    """Untrusted data memory: a flat byte array the adversary can read."""

    def __init__(self, size: int):
        self.cells = np.zeros(size, dtype=np.uint8)

    def __len__(self) -> int:
        return int(self.cells.size)

    def read(self, addresses) -> bytes:
        return self.cells[list(addresses)].tobytes()

    def write(self, addresses, data: bytes) -> None:
        self.cells[list(addresses)] = np.frombuffer(data, dtype=np.uint8)

    def dump(self) -> bytes:
        return self.cells.tobytes()


def draw_threshold(period: Optional[int], rng: np.random.Generator) -> Optional[int]:
    """Accesses until the next shuffle, uniform on [n - n//2, n + n//2] (at least 1)."""
    if period is None:
        return None
    low = max(1, period - period // 2)
    high = period + period // 2
    return int(rng.integers(low, high + 1))


def shuffle_policy(stats: AccessStats) -> bool:
    """True when the access count since the last shuffle reached its threshold."""
    return stats.threshold is not None and stats.accesses_since_shuffle >= stats.threshold


class TrustedRuntime:
    """Key holder and address translator for one execution.

    permutation defaults to page_permutation; tests may pass
    identity_permutation. initial_counter seeds every page counter.
    """

    def __init__(self, key: KeyMaterial, flat: FlatLayout, initial_counter: int = 0,
                 permutation: Callable = page_permutation, memory: Optional[PhysicalMemory] = None):
        if key.sk <= flat.total_size:
            raise KeyMaterialError("sk must exceed the data-section size")
        self._key = key
        self._layout = flat
        self._permutation = permutation
        self._lock = threading.Lock()
        self.page_size = 1 << key.page_bits
        self._counter_mask = (1 << key.counter_bits) - 1
        pages = max(1, -(-flat.total_size // self.page_size))
        self.memory = memory if memory is not None else PhysicalMemory(pages * self.page_size)
        if len(self.memory) < pages * self.page_size:
            raise KeyMaterialError("physical memory is smaller than the data section")
        self._counters = [initial_counter & self._counter_mask] * pages
        self._rng = np.random.default_rng([key.perm_seed & ((1 << 63) - 1), 0x5EED])
        self.stats = AccessStats(threshold=draw_threshold(key.shuffle_period, self._rng))
        self._dirty: set[int] = set()
        self._statement_pages: set[int] = set()
        self._events: list[int] = []
        self._load_image()

    @property
    def page_bits(self) -> int:
        return self._key.page_bits

    @property
    def page_count(self) -> int:
        return len(self._counters)

    def _load_image(self) -> None:
        for entry in self._layout.entries.values():
            data = encode(entry.ty, entry.initial)
            self.memory.write(self._addresses(entry.clear_id, entry.width), data)

    # H
    def physical_offset(self, counter: int, offset: int, page: int = 0) -> int:
        perm = self._permutation(self._key.perm_seed, page, counter, self._key.page_bits)
        return int(perm[offset])

    def _addresses(self, clear_id: int, width: int) -> list[int]:
        addresses = []
        for byte in range(clear_id, clear_id + width):
            page, offset = divmod(byte, self.page_size)
            addresses.append(page * self.page_size + self.physical_offset(self._counters[page], offset, page))
        return addresses

    def resolve(self, r: int, width: int) -> list[int]:
        """Physical addresses of the width bytes referenced by obfuscated ID r.

        A due shuffle happens before the addresses are computed, never in
        the middle of one resolve.
        """
        with self._lock:
            clear_id = recover_clear_id(self._key.sk, r, self._key.data_size)
            if clear_id + width > self._key.data_size:
                raise ForeignIdError(f"reference to {width} bytes runs past the data section")
            if shuffle_policy(self.stats):
                self._shuffle_dirty()
            addresses = self._addresses(clear_id, width)
            pages = range(clear_id // self.page_size, (clear_id + width - 1) // self.page_size + 1)
            self._dirty.update(pages)
            self._statement_pages.update(pages)
            self.stats.accesses_since_shuffle += 1
            return addresses

    def end_statement(self) -> None:
        """Close one statement visit; re-permute its pages when statement shuffling is on."""
        with self._lock:
            pages = sorted(self._statement_pages)
            self._statement_pages.clear()
            if not pages or not self._key.statement_shuffle or self._key.shuffle_period is None:
                return
            self._advance(pages)
            self._dirty.difference_update(pages)

    def _advance(self, pages) -> None:
        for page in pages:
            old = self._counters[page]
            self.shuffle_page(page, old, (old + 1) & self._counter_mask)
        self._events.extend(pages)
        self.stats.shuffles += 1

    def _shuffle_dirty(self) -> None:
        self._advance(sorted(self._dirty))
        self._dirty.clear()
        self.stats.accesses_since_shuffle = 0
        self.stats.threshold = draw_threshold(self._key.shuffle_period, self._rng)

    def shuffle_page(self, page: int, old_counter: int, new_counter: int) -> None:
        """Move every byte of page from H(old_counter, x) to H(new_counter, x)."""
        base = page * self.page_size
        bits = self._key.page_bits
        old_perm = self._permutation(self._key.perm_seed, page, old_counter, bits)
        new_perm = self._permutation(self._key.perm_seed, page, new_counter, bits)
        cells = self.memory.cells[base:base + self.page_size]
        moved = np.empty_like(cells)
        moved[new_perm] = cells[old_perm]
        cells[:] = moved
        self._counters[page] = new_counter

    def drain_shuffle_events(self) -> tuple[int, ...]:
        """Pages rewritten since the last call, as an adversary would notice them."""
        events = tuple(self._events)
        self._events.clear()
        return events

    def counter_of(self, page: int) -> int:
        return self._counters[page]

    def clear_image(self) -> bytes:
        """The data section in clear-ID order; trusted-side debugging only."""
        return self.memory.read(self._addresses(0, self._key.data_size)) if self._key.data_size else b""

    def read_label(self, label: str) -> bytes:
        entry = self._layout.entries[label]
        return self.memory.read(self._addresses(entry.clear_id, entry.width))

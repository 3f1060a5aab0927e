from collections.abc import Iterator

import numpy as np

from src.schemas import BidBatch, DemandObservation


class ObservationStore:
    """
    Append-only store of (reserve, cleared) demand observations accumulated over
    an optimizer run. Besides the raw sequence it keeps per-reserve clearing
    counts, which is all a demand fit needs.
    """

    def __init__(self) -> None:
        self._reserves: list[np.ndarray] = []
        self._cleared: list[np.ndarray] = []
        self._counts: dict[float, list[int]] = {}
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __iter__(self) -> Iterator[DemandObservation]:
        reserves, cleared = self.arrays()
        for reserve, hit in zip(reserves, cleared):
            yield DemandObservation(reserve=float(reserve), cleared=bool(hit))

    def append(self, reserve: float, cleared: np.ndarray) -> None:
        cleared = np.asarray(cleared, dtype=bool)
        self._reserves.append(np.full(cleared.size, float(reserve)))
        self._cleared.append(cleared)
        counts = self._counts.setdefault(float(reserve), [0, 0])
        counts[0] += int(cleared.sum())
        counts[1] += int(cleared.size)
        self._size += int(cleared.size)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._reserves:
            return np.empty(0), np.empty(0, dtype=bool)
        return np.concatenate(self._reserves), np.concatenate(self._cleared)

    def aggregated(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        The aggregated function groups the observations by distinct reserve.

        :return: Sorted reserves, cleared counts and observation counts
        """
        reserves = np.array(sorted(self._counts))
        hits = np.array([self._counts[r][0] for r in reserves], dtype=float)
        totals = np.array([self._counts[r][1] for r in reserves], dtype=float)
        return reserves, hits, totals


def record(batch: BidBatch, store: ObservationStore) -> ObservationStore:
    """
    The record function appends the 2n observations of a round to the store:
    (r+, X+_i >= r+) for the upper arm, then (r-, X-_i >= r-) for the lower arm.

    :param batch: BidBatch: The round's bids
    :param store: ObservationStore: Store to append to
    :return: The same store, for chaining
    :doc-author: Trelent
    """
    store.append(batch.r_plus, batch.x_plus >= batch.r_plus)
    store.append(batch.r_minus, batch.x_minus >= batch.r_minus)
    return store

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Hashable, List, Sequence, TypeVar

import config

logger = logging.getLogger(config.LOGGER_NAME)

Cell = TypeVar("Cell", bound=Hashable)
Result = TypeVar("Result")


def run_cells(cells: Sequence[Cell], work: Callable[[Cell], Result], threads: int = 1) -> List[Result]:
    """
    Run independent sweep cells on a bounded thread pool.

    Results come back ordered by cell key, not by completion, so output rows are reproducible whatever the
    thread count. numpy releases the GIL inside its linear algebra, which is where the cells spend their time.

    Args:
        cells (Sequence[Cell]): sortable, hashable cell keys, e.g. (seed, kappa, alpha)
        work (Callable[[Cell], Result]): pure function of one cell
        threads (int): pool size

    Returns:
        List[Result]: one result per cell, in sorted cell order
    """

    ordered = sorted(set(cells))
    if threads <= 1 or len(ordered) <= 1:
        return [work(cell) for cell in ordered]

    logger.debug(f"running {len(ordered)} cells on {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures: Dict[Cell, object] = {cell: pool.submit(work, cell) for cell in ordered}
        return [futures[cell].result() for cell in ordered]

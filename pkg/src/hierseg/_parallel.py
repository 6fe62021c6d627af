from concurrent.futures import ThreadPoolExecutor


def pmap(fn, items, threads: int = 1) -> list:
    """Ordered map; ``threads == 1`` runs inline and is the reference mode."""
    items = list(items)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))

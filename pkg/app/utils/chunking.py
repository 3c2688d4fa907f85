from __future__ import annotations


def row_blocks(total: int, block_size: int) -> list[slice]:
    """Contiguous row slices of at most `block_size` rows."""
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    if total <= 0:
        return []
    return [slice(start, min(start + block_size, total)) for start in range(0, total, block_size)]

import pytest

from app.utils.chunking import row_blocks


def test_row_blocks_cover_all_rows() -> None:
    blocks = row_blocks(10, 4)
    assert blocks == [slice(0, 4), slice(4, 8), slice(8, 10)]


def test_row_blocks_empty() -> None:
    assert row_blocks(0, 4) == []


def test_row_blocks_rejects_zero_block() -> None:
    with pytest.raises(ValueError):
        row_blocks(5, 0)

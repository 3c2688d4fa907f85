from __future__ import annotations

import numpy as np

from app.core.errors import ConfigurationError


def parse_gamma_grid(raw: str) -> list[float]:
    """Parse "a:b:step" (inclusive) or a comma list into a sorted positive grid."""
    text = raw.strip()
    if not text:
        raise ConfigurationError("Empty gamma grid")

    try:
        if ":" in text:
            parts = [float(item) for item in text.split(":")]
            if len(parts) != 3:
                raise ConfigurationError(f"Gamma grid must look like a:b:step, got {raw!r}")
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ConfigurationError(f"Gamma grid has no points: {raw!r}")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            grid = [round(start + idx * step, 12) for idx in range(count)]
        else:
            grid = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"Gamma grid is not numeric: {raw!r}") from exc

    if not grid or any(gamma <= 0 for gamma in grid):
        raise ConfigurationError(f"Gamma grid values must be positive: {raw!r}")
    return sorted(set(grid))


def parse_bootstrap_spec(raw: str | tuple[int, int] | list[int]) -> tuple[int, int]:
    if isinstance(raw, (tuple, list)):
        replicates, size = (int(item) for item in raw)
    else:
        parts = [item.strip() for item in str(raw).split(",")]
        if len(parts) != 2:
            raise ConfigurationError(f"Bootstrap spec must look like B,m, got {raw!r}")
        try:
            replicates, size = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ConfigurationError(f"Bootstrap spec is not integer: {raw!r}") from exc

    if replicates < 50:
        raise ConfigurationError("Bootstrap needs at least 50 replicates", details={"replicates": replicates})
    if size < 2:
        raise ConfigurationError("Bootstrap resample size must be at least 2", details={"size": size})
    return replicates, size


def _coerce(value: str) -> int | float | str:
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def parse_overrides(items: list[str]) -> dict[str, int | float | str]:
    """Turn ["reps=10", "n=500"] into {"reps": 10, "n": 500}."""
    overrides: dict[str, int | float | str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"Override must look like key=value, got {item!r}")
        overrides[key.strip()] = _coerce(value.strip())
    return overrides

"""Seeded RNG substreams and small validation helpers."""

from __future__ import annotations

import numbers
import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def substream(seed, *keys):
    """Independent generator for the named stream ``keys`` under ``seed``.

    The same ``(seed, keys)`` always yields the same stream, and streams with
    different keys do not share state, so adding a consumer never shifts the
    draws seen by another.
    """
    return np.random.default_rng([int(seed) & (2**64 - 1), *(_key(k) for k in keys)])


def check_scalar(x, name, *, min_val=None, max_val=None, include_min=True, include_max=True,
                 integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(x, kind) or isinstance(x, bool):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a number'}, got {x!r}")
    if min_val is not None and (x < min_val or (x == min_val and not include_min)):
        op = ">=" if include_min else ">"
        raise ValueError(f"{name} must be {op} {min_val}, got {x!r}")
    if max_val is not None and (x > max_val or (x == max_val and not include_max)):
        op = "<=" if include_max else "<"
        raise ValueError(f"{name} must be {op} {max_val}, got {x!r}")
    return x


def positive_normal(rng, mean, std, size, attempts=100):
    """Gaussian draws redrawn while nonpositive, clamped to ``mean / 100`` after that."""
    out = rng.normal(mean, std, size)
    for _ in range(attempts):
        bad = out <= 0
        if not bad.any():
            return out
        out[bad] = rng.normal(mean, std, int(bad.sum()))
    out[out <= 0] = mean / 100.0
    return out


def largest_remainder(weights, total, minimum=0):
    """Integers proportional to ``weights`` that sum exactly to ``total``.

    Leftover units go to the largest fractional parts (ties to the lower
    index). Entries below ``minimum`` are then topped up one unit at a time
    from the currently largest entry.
    """
    w = np.asarray(weights, dtype=float)
    k = w.size
    if total < minimum * k:
        raise ValueError(f"cannot give {k} parts at least {minimum} each out of {total}")
    if w.sum() <= 0:
        w = np.ones(k)
    raw = w / w.sum() * total
    base = np.floor(raw).astype(int)
    short = total - int(base.sum())
    order = np.lexsort((np.arange(k), -(raw - base)))
    base[order[:short]] += 1
    while base.min() < minimum:
        base[int(np.argmax(base))] -= 1
        base[int(np.argmin(base))] += 1
    return base

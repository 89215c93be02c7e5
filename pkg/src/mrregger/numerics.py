"""Low-level numerical helpers: tail-accurate normal functions, exactly
rounded sums, and counter-based uniform streams."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import special

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# Smallest uniform handed to the quantile function; keeps ndtri finite.
_U_FLOOR = 2.0**-60


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def normal_cdf(x):
    """Standard normal CDF.

    ``scipy.special.ndtr`` switches to ``erfc`` for large ``|x|`` so the
    lower tail keeps full relative precision.
    """
    return special.ndtr(np.asarray(x, dtype=float))


def normal_sf(x):
    """Upper tail ``1 - Phi(x)`` computed without cancellation."""
    return special.ndtr(-np.asarray(x, dtype=float))


def normal_quantile(q):
    q = np.asarray(q, dtype=float)
    return special.ndtri(q)


def normal_isf(p):
    """Upper-tail quantile, i.e. ``x`` with ``1 - Phi(x) = p``."""
    return -special.ndtri(np.asarray(p, dtype=float))


def fsum(values) -> float:
    """Exactly rounded sum of a 1-d array (Shewchuk via ``math.fsum``).

    The result does not depend on summation order, so any chunked or
    parallel evaluation that concatenates the same terms agrees bit for bit.
    """
    arr = np.asarray(values, dtype=float)
    return math.fsum(arr.ravel().tolist())


def uniform_stream(key: Sequence[int], n: int, width: int = 1) -> np.ndarray:
    """Return an ``(n, width)`` array of U(0, 1) draws keyed by ``key``.

    Entry ``(j, c)`` is the ``j * width + c``-th output of a Philox counter
    stream, so row ``j`` depends only on ``(key, j)`` and never on how many
    other rows were requested or in which order they are consumed.
    """
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])
    gen = np.random.Generator(np.random.Philox(seq))
    u = gen.random((n, width))
    np.maximum(u, _U_FLOOR, out=u)
    return u


def standard_normals(key: Sequence[int], n: int, width: int = 1) -> np.ndarray:
    """Inverse-CDF normals built on :func:`uniform_stream` (one draw per row entry)."""
    return special.ndtri(uniform_stream(key, n, width))

"""Brownian and Poisson increments on a fine grid, aggregated exactly to
coarser grids so that every step size sees the same underlying path.

Streams are keyed by ``(seed, path_index, process)``: a :class:`numpy.random.SeedSequence`
with that spawn key seeds a counter-based Philox generator, so paths can be
produced in any order, on any worker, with identical results.

Binary dump layout (all little-endian)::

    magic     8 bytes  b"AITNOISE"
    version   u4       1
    seed      u8
    path      i8
    h_fine    f8
    n         u8       number of increments
    dW        n * f8
    n         u8       repeated for the second array
    dN        n * i8
"""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DivisibilityError, InvalidParameterError

__all__ = ["NoisePath", "generate", "coarsen", "head", "poisson_inversion", "dump", "load", "substream"]

_W_TAG, _N_TAG = 0, 1
_POISSON_INVERSION_MAX = 10.0
_MAGIC = b"AITNOISE"
_VERSION = 1


@dataclass(frozen=True, eq=False)
class NoisePath:
    h_fine: float
    n_fine: int
    dW: np.ndarray
    dN: np.ndarray
    seed: int
    path_index: int
    source_digest: str = ""

    def __post_init__(self):
        if self.dW.shape != (self.n_fine,) or self.dN.shape != (self.n_fine,):
            raise InvalidParameterError("dW and dN must both have length n_fine")
        if self.dN.size and self.dN.min() < 0:
            raise InvalidParameterError("Poisson increments must be non-negative")
        self.dW.flags.writeable = False
        self.dN.flags.writeable = False
        if not self.source_digest:
            object.__setattr__(self, "source_digest", self.digest())

    @property
    def h(self) -> float:
        return self.h_fine

    @property
    def horizon(self) -> float:
        return self.n_fine * self.h_fine

    def digest(self) -> str:
        """Checksum of this path's own increments."""
        m = hashlib.blake2b(digest_size=16)
        m.update(struct.pack("<dq", self.h_fine, self.n_fine))
        m.update(np.ascontiguousarray(self.dW, dtype="<f8").tobytes())
        m.update(np.ascontiguousarray(self.dN, dtype="<i8").tobytes())
        return m.hexdigest()


def substream(seed: int, path_index: int, tag: int) -> np.random.Generator:
    if seed < 0 or path_index < 0:
        raise InvalidParameterError("seed and path_index must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(path_index, tag))
    return np.random.Generator(np.random.Philox(ss))


def poisson_inversion(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    """Poisson(mean) samples by sequential-search inversion of uniforms.

    The sequential search over the CDF is done for all samples at once with
    a sorted table lookup (the smallest k with ``u <= F(k)``), which returns
    the same k as the scalar search. Above ``mean = 10`` a rounded normal
    approximation is used instead, with a warning.
    """
    if mean < 0:
        raise InvalidParameterError("Poisson mean must be non-negative")
    if mean > _POISSON_INVERSION_MAX:
        warnings.warn(
            f"Poisson mean {mean:g} > {_POISSON_INVERSION_MAX:g}: using normal approximation",
            RuntimeWarning,
            stacklevel=2,
        )
        z = rng.standard_normal(size)
        return np.maximum(0, np.rint(mean + math.sqrt(mean) * z)).astype(np.int64)
    u = rng.random(size)
    p = math.exp(-mean)
    cdf = [p]
    k = 0
    while True:
        k += 1
        p *= mean / k
        nxt = cdf[-1] + p
        if nxt == cdf[-1] or p == 0.0:
            break
        cdf.append(nxt)
    return np.searchsorted(np.asarray(cdf), u, side="left").astype(np.int64)


def generate(seed: int, path_index: int, n_fine: int, h_fine: float, lam: float) -> NoisePath:
    """Draw ``n_fine`` increments ``dW ~ N(0, h_fine)`` and ``dN ~ Poisson(lam h_fine)``."""
    if n_fine < 1:
        raise InvalidParameterError("n_fine must be at least 1")
    if not h_fine > 0:
        raise InvalidParameterError("h_fine must be positive")
    if not lam > 0:
        raise InvalidParameterError("lambda must be positive")
    dW = substream(seed, path_index, _W_TAG).standard_normal(n_fine) * math.sqrt(h_fine)
    dN = poisson_inversion(substream(seed, path_index, _N_TAG), lam * h_fine, n_fine)
    return NoisePath(h_fine, n_fine, dW, dN, seed, path_index)


def _serial_block_sum(x: np.ndarray, factor: int) -> np.ndarray:
    # accumulate is a strict left-to-right recurrence along the block axis
    return np.add.accumulate(x.reshape(-1, factor), axis=1)[:, -1].copy()


def coarsen(noise: NoisePath, factor: int) -> NoisePath:
    """Sum consecutive blocks of ``factor`` increments, left to right."""
    factor = int(factor)
    if factor < 1 or noise.n_fine % factor:
        raise DivisibilityError(f"factor {factor} does not divide n_fine = {noise.n_fine}")
    if factor == 1:
        return noise
    return NoisePath(
        h_fine=noise.h_fine * factor,
        n_fine=noise.n_fine // factor,
        dW=_serial_block_sum(noise.dW, factor),
        dN=_serial_block_sum(noise.dN, factor),
        seed=noise.seed,
        path_index=noise.path_index,
        source_digest=noise.source_digest,
    )


def head(noise: NoisePath, n: int) -> NoisePath:
    """First ``n`` increments (same source digest)."""
    if not 1 <= n <= noise.n_fine:
        raise InvalidParameterError(f"cannot take {n} of {noise.n_fine} increments")
    if n == noise.n_fine:
        return noise
    return NoisePath(
        noise.h_fine, n, noise.dW[:n].copy(), noise.dN[:n].copy(),
        noise.seed, noise.path_index, noise.source_digest,
    )


def dump(noise: NoisePath, path: str | Path) -> None:
    n = noise.n_fine
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQqdQ", _VERSION, noise.seed, noise.path_index, noise.h_fine, n))
        fh.write(np.ascontiguousarray(noise.dW, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(noise.dN, dtype="<i8").tobytes())


def load(path: str | Path) -> NoisePath:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise InvalidParameterError(f"{path}: not a noise dump")
    off = 8
    version, seed, idx, h, n = struct.unpack_from("<IQqdQ", data, off)
    if version != _VERSION:
        raise InvalidParameterError(f"{path}: unsupported dump version {version}")
    off += struct.calcsize("<IQqdQ")
    dW = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    off += 8 * n
    (n2,) = struct.unpack_from("<Q", data, off)
    off += 8
    dN = np.frombuffer(data, dtype="<i8", count=n2, offset=off).astype(np.int64)
    return NoisePath(h, n, dW, dN, seed, idx)

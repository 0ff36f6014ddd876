"""Subtractive dithered quantization over truncated lattices.

The codec adds a dither uniform over the basic (Voronoi) cell of the origin
before quantizing and subtracts it after, which makes the error independent
of the input and zero-mean whenever the quantizer is not overloaded.  Dither
is reproduced on the server from a shared seed, so only codebook indices and
a small metadata block cross the wire.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import GeometryError, ProtocolError
from .lattice import TruncatedLattice, check_generator, nearest_point_batch, quantize_batch


class DitherStream:
    """Seed-synchronized dither source, uniform over the basic cell.

    The k-th dither is a pure function of (seed, k, generator): client and
    server instantiate the stream independently and read identical vectors.
    A stream is owned by one logical consumer; distinct streams never
    interact.
    """

    def __init__(self, seed: int, gen: np.ndarray, counter: int = 0):
        self.seed = int(seed)
        self.gen = check_generator(gen)
        self.counter = int(counter)

    @property
    def dim(self) -> int:
        return self.gen.shape[0]

    def draw(self, count: int) -> np.ndarray:
        """Next `count` dithers as a (count, L) array; advances the counter."""
        out = dithers_at(self.seed, self.gen, self.counter, count)
        self.counter += count
        return out

    def next(self) -> np.ndarray:
        return self.draw(1)[0]


def dithers_at(seed: int, gen: np.ndarray, start: int, count: int) -> np.ndarray:
    """Dithers number start .. start+count-1 of the stream rooted at seed.

    A uniform sample of the fundamental parallelepiped (gen @ u with u in
    [0,1)^L) is folded onto the Voronoi cell of the origin by subtracting its
    nearest lattice point.  Folding a fundamental-cell sample this way is
    measure-preserving, so the result is uniform over the basic cell.
    """
    dim = gen.shape[0]
    u = rng.stream_unit_block(seed, start * dim, count * dim).reshape(count, dim)
    d0 = u @ gen.T
    return d0 - nearest_point_batch(gen, d0) @ gen.T


def split_vector(x: np.ndarray, dim: int) -> tuple[np.ndarray, int]:
    """Zero-pad x to a multiple of dim and cut into (M, dim) blocks.

    Returns (blocks, pad) where pad is the number of appended zeros; the
    decoder strips them after reassembly.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1:
        raise ValueError("cannot split an empty vector")
    pad = (-x.size) % dim
    if pad:
        x = np.concatenate([x, np.zeros(pad)])
    return x.reshape(-1, dim), pad


def recombine(blocks: np.ndarray, pad: int) -> np.ndarray:
    """Inverse of split_vector."""
    flat = np.asarray(blocks, dtype=np.float64).ravel()
    return flat[: flat.size - pad] if pad else flat


@dataclass
class SdqCodec:
    """A truncated lattice plus input scale and synchronized dither stream."""

    lattice: TruncatedLattice
    zeta: float
    dither: DitherStream = field(repr=False)

    def __post_init__(self):
        if not (self.zeta > 0):
            raise ValueError(f"input scale must be positive, got {self.zeta}")


def sdq_encode(codec: SdqCodec, x: np.ndarray, d: np.ndarray) -> int:
    """Index of the nearest codeword to x + d (x already scaled by zeta)."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if x.shape != (codec.lattice.dim,) or d.shape != x.shape:
        raise ValueError(
            f"expected length-{codec.lattice.dim} vectors, got {x.shape} and {d.shape}"
        )
    return int(quantize_batch(codec.lattice, (x + d)[None, :])[0])


def sdq_decode(codec: SdqCodec, index: int, d: np.ndarray) -> np.ndarray:
    """Reconstruct: (codeword - dither) / zeta."""
    if not 0 <= index < codec.lattice.size:
        raise ProtocolError(f"codebook index {index} out of range [0, {codec.lattice.size})")
    return (codec.lattice.codebook[index] - np.asarray(d, dtype=np.float64)) / codec.zeta


def encode_blocks(codec: SdqCodec, blocks: np.ndarray, dithers: np.ndarray) -> np.ndarray:
    """Vectorized sdq_encode over pre-scaled blocks."""
    return quantize_batch(codec.lattice, blocks + dithers)


def decode_blocks(codec: SdqCodec, indices: np.ndarray, dithers: np.ndarray) -> np.ndarray:
    """Vectorized sdq_decode; both sides of the wire run this same routine."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= codec.lattice.size):
        raise ProtocolError("codebook index out of range")
    return (codec.lattice.codebook[indices] - dithers) / codec.zeta


def second_moment(
    gen: np.ndarray, n_samples: int = 10**6, seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo per-dimension second moment of the basic cell.

    Estimates (1/L) E||d||^2 for d uniform over the Voronoi cell of the
    origin; returns (estimate, standard error of the mean).
    """
    if n_samples < 10**3:
        raise ValueError("need at least 1e3 samples for a usable estimate")
    gen = check_generator(gen)
    dim = gen.shape[0]
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 1 << 17
    while done < n_samples:
        take = min(chunk, n_samples - done)
        d = dithers_at(seed, gen, done, take)
        s = np.einsum("ij,ij->i", d, d) / dim
        total += float(s.sum())
        total_sq += float((s * s).sum())
        done += take
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return mean, (var / n_samples) ** 0.5


def fit_scale(
    subvectors: np.ndarray,
    lat: TruncatedLattice,
    dither_probe: DitherStream,
    target_overload: float,
    iterations: int = 50,
    bracket: tuple[float, float] = (1e-9, 1e9),
) -> float:
    """Largest input scale keeping the probe overload fraction within target.

    Bisects log-zeta over the bracket; a subvector overloads when
    ||zeta*x + d|| exceeds the support radius.  Probe dithers come from the
    dedicated stream passed in, leaving transmission streams untouched.
    """
    if not (0 <= target_overload < 1):
        raise ValueError(f"target_overload must be in [0, 1), got {target_overload}")
    blocks = np.asarray(subvectors, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape[0] < 1 or blocks.shape[1] != lat.dim:
        raise ValueError(f"expected (M, {lat.dim}) subvectors, got {blocks.shape}")
    if not np.any(blocks):
        warnings.warn("all-zero subvectors: scale fit defaulting to 1.0", stacklevel=2)
        return 1.0
    d = dither_probe.draw(blocks.shape[0])
    gamma_sq = lat.gamma * lat.gamma
    # ||zeta x + d||^2 = zeta^2 ||x||^2 + 2 zeta <x, d> + ||d||^2: precompute
    # the coefficients once so each bisection step is three vector ops.
    xx = np.einsum("ij,ij->i", blocks, blocks)
    xd = np.einsum("ij,ij->i", blocks, d)
    dd = np.einsum("ij,ij->i", d, d)

    def overload_frac(zeta: float) -> float:
        return float(np.mean(zeta * zeta * xx + 2.0 * zeta * xd + dd > gamma_sq))

    lo, hi = (np.log(bracket[0]), np.log(bracket[1]))
    if overload_frac(float(np.exp(lo))) > target_overload:
        warnings.warn(
            "no feasible scale meets the overload target; returning bracket floor",
            stacklevel=2,
        )
        return float(np.exp(lo))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if overload_frac(float(np.exp(mid))) <= target_overload:
            lo = mid
        else:
            hi = mid
    return float(np.exp(lo))

"""Adaptive lattice quantization for federated learning, at desk scale.

Layers, bottom up:

- ``lattice``: generator matrices, truncated codebooks, nearest-point search.
- ``sdq``: dither streams, the subtractive dithered codec, scale fitting.
- ``learning``: online adaptation of the generator via a fixed-input net.
- ``models`` / ``data``: flat-parameter classifiers and dataset plumbing.
- ``fl``: the round-based client/server simulation.
- ``checks``: statistical verification of the error law and bounds.
- ``cli``: ``olala run | checks | sweep``.
"""

from .lattice import (
    GEN_A2,
    GEN_D2,
    GEN_HEXAGONAL,
    GEN_IDENTITY_2D,
    TruncatedLattice,
    build_lattice,
    nearest_point,
    quantize,
    rate_of,
)
from .learning import (
    LearnedLattice,
    LearnerConfig,
    PriorNet,
    init_prior_net,
    normalize_generator,
    online_lattice_learning,
)
from .sdq import DitherStream, SdqCodec, sdq_decode, sdq_encode, second_moment

__all__ = [
    "GEN_A2",
    "GEN_D2",
    "GEN_HEXAGONAL",
    "GEN_IDENTITY_2D",
    "TruncatedLattice",
    "build_lattice",
    "nearest_point",
    "quantize",
    "rate_of",
    "LearnedLattice",
    "LearnerConfig",
    "PriorNet",
    "init_prior_net",
    "normalize_generator",
    "online_lattice_learning",
    "DitherStream",
    "SdqCodec",
    "sdq_decode",
    "sdq_encode",
    "second_moment",
]

__version__ = "0.1.0"

"""Online gradient-based adaptation of the lattice generator matrix.

The generator is produced by a small fixed-input network (a deep-prior
parameterization): adapting the lattice means running a few epochs of SGD on
the network weights against a quantization loss.  The discrete nearest-point
assignment is frozen per step, which makes the quantizer output linear in
the generator and the resulting gradient exact rather than approximated
through a softened quantizer.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, NumericError, ResourceLimitError
from .lattice import (
    GEN_HEXAGONAL,
    TruncatedLattice,
    _full_grid,
    build_lattice,
    check_generator,
    count_codewords_at_most,
    quantize_batch,
)
from .rng import derive_seed, stream_unit_block
from .sdq import DitherStream, SdqCodec, dithers_at, fit_scale, recombine, split_vector

PRIOR_INPUT_WIDTH = 16
PRIOR_HIDDEN_WIDTH = 32

LOSS_KINDS = ("mse", "task", "neg_snr")
DEFAULT_LEARNING_RATES = {"mse": 1e-6, "neg_snr": 1e-4, "task": 1e-7}

# Stream labels internal to a single learning run.
_TAG_SHUFFLE = 1
_TAG_BATCH_DITHER = 2
_TAG_BATCH_PROBE = 3
_TAG_MEASURE_PROBE = 4
_TAG_MEASURE_DITHER = 5
_TAG_EMIT_PROBE = 6


def _layer_sizes(lattice_dim: int) -> list[tuple[int, int]]:
    h = PRIOR_HIDDEN_WIDTH
    return [(PRIOR_INPUT_WIDTH, h), (h, h), (h, lattice_dim * lattice_dim)]


def _theta_size(lattice_dim: int) -> int:
    return sum(fi * fo + fo for fi, fo in _layer_sizes(lattice_dim))


@dataclass
class PriorNet:
    """Fixed-input fully-connected net whose output reshapes to a generator.

    Two tanh hidden layers of width 32 on an all-ones input of width 16;
    the input never changes, so the network is simply a smooth, trainable
    parameterization of one L x L matrix.
    """

    lattice_dim: int
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        expect = _theta_size(self.lattice_dim)
        if self.theta.shape != (expect,):
            raise ValueError(f"theta must have shape ({expect},), got {self.theta.shape}")

    def copy(self) -> "PriorNet":
        return PriorNet(self.lattice_dim, self.theta.copy())


def _unpack_theta(theta: np.ndarray, lattice_dim: int):
    mats = []
    pos = 0
    for fi, fo in _layer_sizes(lattice_dim):
        w = theta[pos : pos + fi * fo].reshape(fi, fo)
        pos += fi * fo
        b = theta[pos : pos + fo]
        pos += fo
        mats.append((w, b))
    return mats


def _forward_cached(theta: np.ndarray, lattice_dim: int):
    (w1, b1), (w2, b2), (w3, b3) = _unpack_theta(theta, lattice_dim)
    a1 = np.tanh(w1.sum(axis=0) + b1)  # fixed all-ones input: s @ W1 == column sums
    a2 = np.tanh(a1 @ w2 + b2)
    out = a2 @ w3 + b3
    return out.reshape(lattice_dim, lattice_dim), (a1, a2)


def prior_forward(net: PriorNet) -> np.ndarray:
    """Deterministic forward pass; returns the raw (unnormalized) matrix."""
    if not np.all(np.isfinite(net.theta)):
        raise NumericError("prior network parameters are not finite")
    raw, _ = _forward_cached(net.theta, net.lattice_dim)
    return raw


def _backward(theta: np.ndarray, lattice_dim: int, cache, dout_flat: np.ndarray) -> np.ndarray:
    (w1, b1), (w2, b2), (w3, b3) = _unpack_theta(theta, lattice_dim)
    a1, a2 = cache
    dz3 = dout_flat
    dw3 = np.outer(a2, dz3)
    da2 = w3 @ dz3
    dz2 = da2 * (1.0 - a2 * a2)
    dw2 = np.outer(a1, dz2)
    da1 = w2 @ dz2
    dz1 = da1 * (1.0 - a1 * a1)
    dw1 = np.tile(dz1, (PRIOR_INPUT_WIDTH, 1))  # input is all ones
    return np.concatenate(
        [dw1.ravel(), dz1, dw2.ravel(), dz2, dw3.ravel(), dz3]
    )


def init_prior_net(
    lattice_dim: int, seed: int, warm_start: np.ndarray | None = None
) -> PriorNet:
    """Symmetric uniform fan-in init, then bias the output layer so the
    initial matrix equals warm_start (hexagonal for L=2, identity otherwise).

    Warm-starting at a known-good lattice makes the no-training case a sane
    quantizer and keeps early training rounds comparable to fixed baselines.
    """
    if warm_start is None:
        warm_start = GEN_HEXAGONAL if lattice_dim == 2 else np.eye(lattice_dim)
    warm_start = check_generator(warm_start)
    if warm_start.shape[0] != lattice_dim:
        raise ValueError("warm_start shape does not match lattice_dim")
    parts = []
    draw_index = 0
    for fi, fo in _layer_sizes(lattice_dim):
        bound = 1.0 / math.sqrt(fi)
        u = stream_unit_block(seed, draw_index, fi * fo)
        draw_index += fi * fo
        parts.append((2.0 * u - 1.0) * bound)
        parts.append(np.zeros(fo))
    theta = np.concatenate(parts)
    net = PriorNet(lattice_dim, theta)
    raw, _ = _forward_cached(theta, lattice_dim)
    # Output bias lives in the trailing L^2 slots of theta.
    out_dim = lattice_dim * lattice_dim
    theta[-out_dim:] = warm_start.ravel() - (raw.ravel() - theta[-out_dim:])
    return net


def codeword_budget(lattice_dim: int, rate: float) -> int:
    """Codebook size ceiling 2^(L*R), floored to an integer."""
    budget = int(math.floor(2.0 ** (lattice_dim * rate) + 1e-9))
    if budget < 1:
        raise ValueError(f"rate {rate} gives an empty codeword budget")
    return budget


def normalize_scale(
    raw: np.ndarray,
    rate: float,
    gamma: float = 1.0,
    iterations: int = 60,
    bracket: tuple[float, float] = (1e-6, 1e6),
    enum_cap: int = 10**7,
) -> float:
    """Smallest c such that c*raw has at most 2^(L*R) codewords within gamma.

    The codeword count is monotone nonincreasing in c, so log-space
    bisection over the bracket is valid.  Counting ||c*raw l|| <= gamma is
    equivalent to thresholding the raw lattice's norms at gamma/c, which
    lets one box enumeration serve every bisection step with that box size.
    """
    raw = check_generator(raw)
    dim = raw.shape[0]
    budget = codeword_budget(dim, rate)
    inv_max = float(np.linalg.norm(np.linalg.inv(raw), axis=1).max())
    raw_t = raw.T
    sorted_sq: dict[int, np.ndarray] = {}

    sub_bound_cap = max((int(16384 ** (1.0 / dim)) - 1) // 2, 1)

    def sub_count(bound: int, threshold_sq: float) -> int:
        norms = sorted_sq.get(bound)
        if norms is None:
            pts = _full_grid(2 * bound + 1, dim) @ raw_t
            norms = np.sort(np.einsum("ij,ij->i", pts, pts))
            sorted_sq[bound] = norms
        return int(np.searchsorted(norms, threshold_sq, side="right"))

    def count_at_most(c: float) -> int:
        bound = int(math.ceil(gamma * inv_max / c))
        if (2 * bound + 1) ** dim > enum_cap:
            return budget + 1
        threshold_sq = (gamma / c) ** 2
        small = min(bound, sub_bound_cap)
        cnt = sub_count(small, threshold_sq)
        if cnt > budget or small == bound:
            return min(cnt, budget + 1)
        # Sub-box was inconclusive for a larger search box (rare, near the
        # feasibility boundary): fall back to the exact early-exit counter.
        return count_codewords_at_most(c * raw, gamma, budget, enum_cap)

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    if count_at_most(math.exp(hi)) > budget:
        raise GeometryError(
            "generator cannot be scaled to meet the codeword budget within the bracket"
        )
    if count_at_most(math.exp(lo)) <= budget:
        return bracket[0]
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if count_at_most(math.exp(mid)) <= budget:
            hi = mid
        else:
            lo = mid
    return float(math.exp(hi))


def normalize_generator(raw: np.ndarray, rate: float, gamma: float = 1.0) -> np.ndarray:
    """Scale the raw matrix to respect the 2^(L*R) codeword ceiling."""
    raw = check_generator(raw)
    budget = codeword_budget(raw.shape[0], rate)
    c = normalize_scale(raw, rate, gamma)
    # Guard the boundary: the fast bisection predicate and the reference
    # count can disagree by one point exactly at the radius.
    for _ in range(4):
        if count_codewords_at_most(c * raw, gamma, budget) <= budget:
            break
        c *= 1.0 + 1e-12
    return c * raw


@dataclass
class LearnerConfig:
    """Knobs of one online lattice-learning run."""

    loss_kind: str = "mse"
    learning_rate: float | None = None  # None resolves to a per-loss default
    epochs: int = 20
    batches: int = 8
    rate: float = 2.0
    target_overload: float = 0.005
    overload_mode: str = "fraction"  # fraction | heuristic_minus1
    heuristic_target: float = 0.003
    heuristic_filter_sigma: float = 3.0
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.loss_kind == "task":
            # The task loss needs the whole update vector, so batching is moot.
            self.batches = 1
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LEARNING_RATES[self.loss_kind]
        if self.epochs < 0 or self.batches < 1:
            raise ValueError("epochs must be >= 0 and batches >= 1")
        if not (0 <= self.target_overload < 1):
            raise ValueError(f"target_overload must be in [0,1), got {self.target_overload}")
        if self.overload_mode not in ("fraction", "heuristic_minus1"):
            raise ValueError(f"unknown overload_mode {self.overload_mode!r}")


@dataclass
class LearnedLattice:
    """Output of a learning run: normalized generator, input scale, weights."""

    gen: np.ndarray
    zeta: float
    theta: np.ndarray = field(repr=False)


def pack_learned_lattice(learned: LearnedLattice) -> bytes:
    """Adaptation metadata wire format: u32 L, row-major float64 generator,
    float64 input scale (all little-endian)."""
    dim = learned.gen.shape[0]
    return (
        struct.pack("<I", dim)
        + learned.gen.astype("<f8").tobytes(order="C")
        + struct.pack("<d", learned.zeta)
    )


def unpack_learned_lattice(blob: bytes) -> tuple[np.ndarray, float]:
    if len(blob) < 4:
        raise ValueError("lattice metadata blob too short")
    (dim,) = struct.unpack_from("<I", blob, 0)
    expect = 4 + 8 * dim * dim + 8
    if len(blob) != expect:
        raise ValueError(f"lattice metadata blob length {len(blob)}, expected {expect}")
    gen = np.frombuffer(blob, dtype="<f8", offset=4, count=dim * dim).reshape(dim, dim).copy()
    (zeta,) = struct.unpack_from("<d", blob, 4 + 8 * dim * dim)
    if not zeta > 0:
        raise ValueError(f"input scale must be positive, got {zeta}")
    return check_generator(gen), zeta


def frozen_loss(
    kind: str,
    gen: np.ndarray,
    blocks: np.ndarray,
    dithers: np.ndarray,
    assignments: np.ndarray,
    zeta: float,
    w: np.ndarray | None = None,
    objective=None,
    pad: int = 0,
) -> float:
    """Loss with the nearest-point assignments held fixed.

    blocks are raw (unscaled) subvectors; assignments are integer coefficient
    vectors.  With assignments frozen the reconstruction is linear in gen,
    which is what makes the analytic gradient exact.
    """
    x = zeta * blocks
    rec_scaled = assignments @ gen.T - dithers
    if kind == "mse":
        e = x - rec_scaled
        return float(np.einsum("ij,ij->", e, e))
    if kind == "neg_snr":
        e = x - rec_scaled
        sig = float(np.einsum("ij,ij->", x, x))
        dist = float(np.einsum("ij,ij->", e, e))
        return -sig / dist
    if kind == "task":
        if objective is None or w is None:
            raise ValueError("task loss requires the model vector and a client objective")
        rec = recombine(rec_scaled / zeta, pad)
        return float(objective(w + rec)[0])
    raise ValueError(f"unknown loss kind {kind!r}")


def _frozen_loss_grad_gen(kind, gen, blocks, dithers, assignments, zeta, w, objective, pad):
    """(loss, d loss / d gen) with frozen assignments."""
    x = zeta * blocks
    lstar = assignments.astype(np.float64)
    rec_scaled = lstar @ gen.T - dithers
    e = x - rec_scaled
    if kind == "mse":
        loss = float(np.einsum("ij,ij->", e, e))
        dgen = -2.0 * e.T @ lstar
        return loss, dgen
    if kind == "neg_snr":
        sig = float(np.einsum("ij,ij->", x, x))
        dist = float(np.einsum("ij,ij->", e, e))
        loss = -sig / dist
        # d(-S/D)/dD = S/D^2, dD/dgen as in the mse case.
        dgen = (sig / dist**2) * (-2.0 * e.T @ lstar)
        return loss, dgen
    if kind == "task":
        if objective is None or w is None:
            raise ValueError("task loss requires the model vector and a client objective")
        rec = recombine(rec_scaled / zeta, pad)
        loss, grad = objective(w + rec)
        gblocks, _ = split_vector(grad, gen.shape[0])
        dgen = (gblocks.T @ lstar) / zeta
        return float(loss), dgen
    raise ValueError(f"unknown loss kind {kind!r}")


def compute_loss(
    kind: str,
    blocks: np.ndarray,
    codec,
    dithers: np.ndarray,
    w: np.ndarray | None = None,
    objective=None,
    pad: int = 0,
) -> float:
    """Quantization loss of a batch under the codec's current lattice.

    mse and neg_snr are evaluated in the codec's scaled space; the task loss
    evaluates the client objective at the model plus the full reconstructed
    update.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape[0] < 1:
        raise ValueError("batch of subvectors must be a nonempty (M, L) array")
    lat = codec.lattice
    x = codec.zeta * blocks
    idx = quantize_batch(lat, x + dithers)
    return frozen_loss(
        kind, lat.gen, blocks, dithers, lat.index_set[idx], codec.zeta, w, objective, pad
    )


def lattice_grad(
    net: PriorNet,
    blocks: np.ndarray,
    codec,
    kind: str,
    dithers: np.ndarray,
    w: np.ndarray | None = None,
    objective=None,
    pad: int = 0,
) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient over theta with frozen assignments.

    The normalization constant relating the raw network output to the
    codec's generator is treated as a constant of the step (stop gradient),
    as is the assignment argmin; everything else is ordinary backprop.
    """
    raw, cache = _forward_cached(net.theta, net.lattice_dim)
    gen = codec.lattice.gen
    denom = float(np.einsum("ij,ij->", raw, raw))
    if denom <= 0:
        raise GeometryError("raw prior output is identically zero")
    scale = float(np.einsum("ij,ij->", gen, raw)) / denom  # gen == scale * raw
    x = codec.zeta * blocks
    idx = quantize_batch(codec.lattice, x + dithers)
    loss, dgen = _frozen_loss_grad_gen(
        kind, gen, blocks, dithers, codec.lattice.index_set[idx], codec.zeta, w, objective, pad
    )
    dtheta = _backward(net.theta, net.lattice_dim, cache, (scale * dgen).ravel())
    return loss, dtheta


def overload_heuristic_minus1(
    subvectors: np.ndarray,
    lat: TruncatedLattice,
    dither_probe: DitherStream,
    target: float = 0.003,
    filter_sigma: float = 3.0,
) -> float:
    """Scale fit on variance-filtered subvectors.

    Subvectors deviating from the empirical mean by at least filter_sigma
    per-coordinate standard deviations are excluded before fitting, so rare
    outliers no longer pin the scale; if the filter removes everything, the
    fit falls back to the unfiltered data.
    """
    blocks = np.asarray(subvectors, dtype=np.float64)
    if blocks.shape[0] < 10:
        raise ValueError("heuristic scale fit needs at least 10 subvectors")
    mu = blocks.mean(axis=0)
    sd = blocks.std(axis=0)
    keep = np.all(np.abs(blocks - mu) < filter_sigma * sd, axis=1)
    survivors = blocks[keep] if keep.any() else blocks
    return fit_scale(survivors, lat, dither_probe, target)


def _fit_emit_scale(blocks, lat, cfg: LearnerConfig, probe: DitherStream) -> float:
    """Scale fit at the configured operating point; training batches use the
    same mode so the loss reflects how the lattice will actually be run."""
    if cfg.overload_mode == "heuristic_minus1" and blocks.shape[0] >= 10:
        return overload_heuristic_minus1(
            blocks, lat, probe, cfg.heuristic_target, cfg.heuristic_filter_sigma
        )
    return fit_scale(blocks, lat, probe, cfg.target_overload)


_MEASURE_REPS = 4


def _measured_mse(theta, lattice_dim, blocks, cfg: LearnerConfig) -> float:
    """Safeguard metric: empirical distortion of the full training set, in
    model units, under deterministic probe and dither streams.

    Averaged over a few dither realizations so the accept/revert decision
    tracks expected distortion rather than one draw's luck.
    """
    raw, _ = _forward_cached(theta, lattice_dim)
    gen = normalize_generator(raw, cfg.rate, cfg.gamma)
    lat = build_lattice(gen, cfg.gamma)
    probe = DitherStream(derive_seed(cfg.seed, _TAG_MEASURE_PROBE), gen)
    zeta = _fit_emit_scale(blocks, lat, cfg, probe)
    total = 0.0
    for rep in range(_MEASURE_REPS):
        d = dithers_at(
            derive_seed(cfg.seed, _TAG_MEASURE_DITHER, rep), gen, 0, blocks.shape[0]
        )
        idx = quantize_batch(lat, zeta * blocks + d)
        rec = (lat.codebook[idx] - d) / zeta
        e = blocks - rec
        total += float(np.einsum("ij,ij->", e, e))
    return total / _MEASURE_REPS


def online_lattice_learning(
    net: PriorNet,
    w_t: np.ndarray,
    h_t: np.ndarray,
    cfg: LearnerConfig,
    objective=None,
) -> LearnedLattice:
    """Adapt the prior network to one update vector and emit the lattice.

    Each epoch shuffles the update's subvectors (seeded), partitions them
    into batches, and applies plain SGD on theta.  If the post-training
    empirical distortion exceeds the pre-training one, the pre-training
    weights are kept (monotone safeguard).  Degenerate geometry mid-training
    reverts to the last valid weights and shrinks the step size; after three
    reversions the loop aborts and the best checkpoint so far wins.
    """
    if cfg.loss_kind == "task" and objective is None:
        raise ValueError("task loss requires a client objective")
    dim = net.lattice_dim
    blocks, pad = split_vector(np.asarray(h_t, dtype=np.float64), dim)
    n_blocks = blocks.shape[0]
    theta0 = net.theta.copy()
    theta = theta0.copy()
    last_valid = theta0.copy()
    eta = float(cfg.learning_rate)
    reversions = 0
    aborted = False

    checkpoints = [(_measured_mse(theta0, dim, blocks, cfg), theta0.copy())]

    for epoch in range(cfg.epochs):
        perm_u = stream_unit_block(derive_seed(cfg.seed, _TAG_SHUFFLE, epoch), 0, n_blocks)
        order = np.argsort(perm_u, kind="stable")
        for b, batch_ids in enumerate(np.array_split(order, cfg.batches)):
            if batch_ids.size == 0:
                continue
            batch = blocks[batch_ids]
            try:
                raw, _ = _forward_cached(theta, dim)
                gen = normalize_generator(raw, cfg.rate, cfg.gamma)
                lat = build_lattice(gen, cfg.gamma)
                probe = DitherStream(derive_seed(cfg.seed, _TAG_BATCH_PROBE, epoch, b), gen)
                zeta = _fit_emit_scale(batch, lat, cfg, probe)
                d = dithers_at(
                    derive_seed(cfg.seed, _TAG_BATCH_DITHER, epoch, b), gen, 0, batch.shape[0]
                )
                codec = SdqCodec(lattice=lat, zeta=zeta, dither=probe)
                step_net = PriorNet(dim, theta)
                _, dtheta = lattice_grad(
                    step_net, batch, codec, cfg.loss_kind, d, w=w_t,
                    objective=objective, pad=pad,
                )
            except (GeometryError, ResourceLimitError):
                theta = last_valid.copy()
                eta *= 0.1
                reversions += 1
                if reversions > 3:
                    aborted = True
                    break
                continue
            last_valid = theta.copy()
            theta = theta - eta * dtheta
        if aborted:
            break
        try:
            checkpoints.append((_measured_mse(theta, dim, blocks, cfg), theta.copy()))
        except (GeometryError, ResourceLimitError):
            theta = last_valid.copy()
            eta *= 0.1
            reversions += 1
            if reversions > 3:
                aborted = True
                break

    if aborted:
        theta_final = min(checkpoints, key=lambda c: c[0])[1]
    else:
        try:
            final_mse = _measured_mse(theta, dim, blocks, cfg)
        except (GeometryError, ResourceLimitError):
            final_mse = math.inf
        theta_final = theta if final_mse <= checkpoints[0][0] else theta0

    raw, _ = _forward_cached(theta_final, dim)
    gen = normalize_generator(raw, cfg.rate, cfg.gamma)
    lat = build_lattice(gen, cfg.gamma)
    probe = DitherStream(derive_seed(cfg.seed, _TAG_EMIT_PROBE), gen)
    zeta = _fit_emit_scale(blocks, lat, cfg, probe)
    return LearnedLattice(gen=gen, zeta=zeta, theta=theta_final.copy())

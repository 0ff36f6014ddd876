"""Deterministic federated simulation with per-client adaptive lattice codecs.

Each round: the server broadcasts the model; every client runs local SGD,
optionally relearns its lattice, scales and SDQ-encodes its update, and
ships integer indices plus (generator, zeta) metadata.  The server rebuilds
each client's dither stream from the shared seed and decodes.  Everything is
a pure function of the experiment config and master seed: reductions happen
in ascending client id regardless of execution order, so results do not
depend on scheduling or on the --parallel setting.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .data import Dataset, load_idx_dataset, partition_dataset, synthetic_dataset
from .errors import NumericError, ProtocolError
from .lattice import (
    GEN_A2,
    GEN_D2,
    GEN_HEXAGONAL,
    GEN_IDENTITY_2D,
    build_lattice,
)
from .learning import (
    LearnedLattice,
    LearnerConfig,
    PriorNet,
    init_prior_net,
    normalize_generator,
    online_lattice_learning,
    overload_heuristic_minus1,
)
from .models import ModelArch, accuracy, init_params, loss_and_grad, make_objective
from .sdq import (
    DitherStream,
    SdqCodec,
    decode_blocks,
    encode_blocks,
    fit_scale,
    recombine,
    split_vector,
)

QUANTIZER_KINDS = (
    "none",
    "fixed_identity",
    "fixed_hex",
    "fixed_a2",
    "fixed_d2",
    "static_global",
    "static_per_user",
    "olala",
)

FIXED_GENERATORS = {
    "fixed_identity": GEN_IDENTITY_2D,
    "fixed_hex": GEN_HEXAGONAL,
    "fixed_a2": GEN_A2,
    "fixed_d2": GEN_D2,
}


def bits_accounting(m: int, rate: float, lattice_dim: int, include_zeta: bool = True) -> int:
    """Uplink bits for one quantized update: ceil(m*R) + 64*L^2 (+64 for zeta).

    The 64*L^2 term is the full-precision generator matrix; the optional 64
    covers the input scale, which the base formula leaves implicit.
    """
    if m < 1 or lattice_dim < 1:
        raise ValueError("m and lattice_dim must be positive")
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    bits = math.ceil(m * rate) + 64 * lattice_dim * lattice_dim
    return bits + 64 if include_zeta else bits


def local_train(
    arch: ModelArch,
    params: np.ndarray,
    shard_x: np.ndarray,
    shard_y: np.ndarray,
    steps: int,
    eta: float,
    seed: int,
) -> np.ndarray:
    """Single-sample SGD for `steps` steps; returns the update h = w' - w.

    The caller's parameter vector is untouched; sample indices come from the
    counter stream rooted at seed.
    """
    if steps < 1:
        raise ValueError("need at least one local step")
    n = shard_y.shape[0]
    w = params.copy()
    for s in range(steps):
        i = int(rng.stream_unit(seed, s) * n)
        try:
            _, grad = loss_and_grad(arch, w, shard_x[i : i + 1], shard_y[i : i + 1])
        except NumericError as exc:
            raise NumericError(f"non-finite loss at local step {s}") from exc
        w -= eta * grad
    return w - params


def evaluate(arch: ModelArch, params: np.ndarray, test: Dataset) -> float:
    """Deterministic test accuracy in [0, 1]."""
    return accuracy(arch, params, test.features, test.labels)


@dataclass
class Payload:
    """What one client sends up, plus client-side bookkeeping for the logs."""

    uid: int
    t: int
    m: int
    kind: str
    bits: int
    zeta: float = 1.0
    pad: int = 0
    gen: np.ndarray | None = None
    indices: np.ndarray | None = None
    raw_update: np.ndarray | None = None  # uncompressed path only
    distortion: float = 0.0
    overload_frac: float = 0.0
    snr_db: float = math.inf
    codebook_size: int = 0
    adapted: bool = False
    theta: np.ndarray | None = None  # learner state carried back to the client
    recon: np.ndarray | None = field(default=None, repr=False)  # client-side decode


@dataclass
class ClientState:
    uid: int
    shard_x: np.ndarray
    shard_y: np.ndarray
    seed_root: int  # the per-client root all round seeds derive from
    quantizer_kind: str
    gen: np.ndarray | None = None
    net: PriorNet | None = None


@dataclass
class RoundRecord:
    t: int
    accuracy: float
    mean_snr_db: float
    mean_distortion: float
    total_bits: int
    payloads: list[Payload] = field(repr=False, default_factory=list)


@dataclass
class FlResult:
    arch: ModelArch
    params: np.ndarray
    records: list[RoundRecord]
    lattice_log: list[dict]


def _learner_cfg_for_round(cfg, seed: int) -> LearnerConfig:
    return LearnerConfig(
        loss_kind=cfg.loss_kind,
        learning_rate=cfg.lattice_lr,
        epochs=cfg.lattice_epochs,
        batches=cfg.lattice_batches,
        rate=cfg.rate,
        target_overload=cfg.target_overload,
        overload_mode=cfg.overload_mode,
        heuristic_target=cfg.heuristic_target,
        heuristic_filter_sigma=cfg.heuristic_filter_sigma,
        seed=seed,
    )


def _adapts_this_round(kind: str, t: int, adapt_every: int) -> bool:
    if kind == "olala":
        return t % max(adapt_every, 1) == 0
    if kind == "static_per_user":
        return t == 0
    return False


def client_round(client: ClientState, w_global: np.ndarray, t: int, cfg) -> Payload:
    """Local training, optional lattice adaptation, scale fit, SDQ encoding."""
    arch = cfg.arch()
    h = local_train(
        arch,
        w_global,
        client.shard_x,
        client.shard_y,
        cfg.local_steps,
        cfg.model_lr,
        rng.derive_seed(client.seed_root, t, rng.TAG_LOCAL_SGD),
    )
    m = h.size
    if client.quantizer_kind == "none":
        return Payload(
            uid=client.uid, t=t, m=m, kind="none", bits=64 * m,
            raw_update=h, recon=h.copy(), distortion=0.0, snr_db=math.inf,
        )

    adapted = False
    if _adapts_this_round(client.quantizer_kind, t, cfg.adapt_every):
        if client.net is None or cfg.reset_theta_each_round:
            client.net = init_prior_net(
                cfg.lattice_dim, rng.derive_seed(client.seed_root, rng.TAG_CLIENT_ROOT)
            )
        lcfg = _learner_cfg_for_round(
            cfg, rng.derive_seed(client.seed_root, t, rng.TAG_LATTICE_LEARN)
        )
        objective = (
            make_objective(arch, client.shard_x, client.shard_y)
            if cfg.loss_kind == "task"
            else None
        )
        learned: LearnedLattice = online_lattice_learning(
            client.net, w_global, h, lcfg, objective=objective
        )
        client.net = PriorNet(cfg.lattice_dim, learned.theta)
        client.gen = learned.gen
        adapted = True
    if client.gen is None:
        raise ProtocolError(f"client {client.uid} has no generator configured")

    gen = client.gen
    lat = build_lattice(gen, 1.0)
    blocks, pad = split_vector(h, cfg.lattice_dim)
    n_blocks = blocks.shape[0]
    probe = DitherStream(rng.derive_seed(client.seed_root, t, rng.TAG_PROBE_DITHER), gen)
    if cfg.overload_mode == "heuristic_minus1":
        zeta = overload_heuristic_minus1(
            blocks, lat, probe, cfg.heuristic_target, cfg.heuristic_filter_sigma
        )
    else:
        zeta = fit_scale(blocks, lat, probe, cfg.target_overload)

    codec = SdqCodec(
        lattice=lat,
        zeta=zeta,
        dither=DitherStream(rng.derive_seed(client.seed_root, t, rng.TAG_TRANSMIT_DITHER), gen),
    )
    scaled = zeta * blocks
    dithers = codec.dither.draw(n_blocks)
    indices = encode_blocks(codec, scaled, dithers)
    recon_blocks = decode_blocks(codec, indices, dithers)
    recon = recombine(recon_blocks, pad)
    err = h - recon
    distortion = float(err @ err)
    sig = float(h @ h)
    y = scaled + dithers
    overload = float(np.mean(np.einsum("ij,ij->i", y, y) > lat.gamma * lat.gamma))
    snr = math.inf if distortion == 0 else 10.0 * math.log10(sig / distortion)
    return Payload(
        uid=client.uid,
        t=t,
        m=m,
        kind=client.quantizer_kind,
        bits=bits_accounting(m, cfg.rate, cfg.lattice_dim, cfg.include_zeta_bits),
        zeta=zeta,
        pad=pad,
        gen=gen,
        indices=indices,
        distortion=distortion,
        overload_frac=overload,
        snr_db=snr,
        codebook_size=lat.size,
        adapted=adapted,
        theta=None if client.net is None else client.net.theta.copy(),
        recon=recon,
    )


def server_round(
    payloads: list[Payload],
    w_global: np.ndarray,
    client_seeds: dict[int, int],
    t: int,
    n_users: int,
) -> np.ndarray:
    """Decode every payload from shared seeds and federated-average.

    Requires exactly one payload per registered client (full participation);
    the sum runs in ascending client id so arrival order is irrelevant.
    """
    if len(payloads) != n_users:
        raise ProtocolError(f"round {t}: expected {n_users} payloads, got {len(payloads)}")
    by_uid = {p.uid: p for p in payloads}
    if len(by_uid) != n_users or set(by_uid) != set(client_seeds):
        raise ProtocolError(f"round {t}: payload client ids do not match the registry")
    total = np.zeros_like(w_global)
    for uid in sorted(by_uid):
        p = by_uid[uid]
        if p.kind == "none":
            total += p.raw_update
            continue
        lat = build_lattice(p.gen, 1.0)
        codec = SdqCodec(
            lattice=lat,
            zeta=p.zeta,
            dither=DitherStream(
                rng.derive_seed(client_seeds[uid], t, rng.TAG_TRANSMIT_DITHER), p.gen
            ),
        )
        dithers = codec.dither.draw(p.indices.shape[0])
        blocks = decode_blocks(codec, p.indices, dithers)
        h_hat = recombine(blocks, p.pad)
        if h_hat.size != p.m:
            raise ProtocolError(f"round {t}: decoded length {h_hat.size} != m={p.m}")
        total += h_hat
    return w_global + total / n_users


def _build_dataset(cfg) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "idx":
        train = load_idx_dataset(cfg.train_images, cfg.train_labels, cfg.n_classes)
        test = load_idx_dataset(cfg.test_images, cfg.test_labels, cfg.n_classes)
        return train, test
    data_seed = rng.derive_seed(cfg.master_seed, rng.TAG_DATA)
    train = synthetic_dataset(
        cfg.synthetic_train_size, cfg.synthetic_features, cfg.n_classes,
        cfg.synthetic_noise, seed=data_seed, center_seed=data_seed,
    )
    test = synthetic_dataset(
        cfg.synthetic_test_size, cfg.synthetic_features, cfg.n_classes,
        cfg.synthetic_noise, seed=rng.derive_seed(data_seed, 1), center_seed=data_seed,
    )
    return train, test


def _client_task(client: ClientState, w_global: np.ndarray, t: int, cfg) -> Payload:
    return client_round(client, w_global, t, cfg)


def run_fl(cfg) -> FlResult:
    """Execute the full experiment described by cfg; see config.py for knobs."""
    cfg.validate()
    arch = cfg.arch()
    train, test = _build_dataset(cfg)
    shards = partition_dataset(train, cfg.n_users, seed=rng.derive_seed(cfg.master_seed, rng.TAG_DATA, 1))
    w = init_params(arch, rng.derive_seed(cfg.master_seed, rng.TAG_MODEL_INIT))

    clients = []
    for u in range(cfg.n_users):
        shard = train.subset(shards[u])
        clients.append(
            ClientState(
                uid=u,
                shard_x=shard.features,
                shard_y=shard.labels,
                seed_root=rng.derive_seed(cfg.master_seed, rng.TAG_CLIENT_ROOT, u),
                quantizer_kind=cfg.quantizer,
            )
        )

    if cfg.quantizer in FIXED_GENERATORS:
        gen = normalize_generator(FIXED_GENERATORS[cfg.quantizer], cfg.rate, 1.0)
        for c in clients:
            c.gen = gen
    elif cfg.quantizer == "static_global":
        # Offline phase: one shared lattice learned from the clients' initial
        # updates, then frozen for the whole run.
        updates = [
            local_train(
                arch, w, c.shard_x, c.shard_y, cfg.local_steps, cfg.model_lr,
                rng.derive_seed(c.seed_root, rng.TAG_OFFLINE),
            )
            for c in clients
        ]
        net = init_prior_net(
            cfg.lattice_dim, rng.derive_seed(cfg.master_seed, rng.TAG_OFFLINE, 1)
        )
        lcfg = _learner_cfg_for_round(cfg, rng.derive_seed(cfg.master_seed, rng.TAG_OFFLINE, 2))
        if cfg.loss_kind == "task":
            pooled_x = np.concatenate([c.shard_x for c in clients])
            pooled_y = np.concatenate([c.shard_y for c in clients])
            objective = make_objective(arch, pooled_x, pooled_y)
        else:
            objective = None
        learned = online_lattice_learning(
            net, w, np.concatenate(updates), lcfg, objective=objective
        )
        for c in clients:
            c.gen = learned.gen

    records: list[RoundRecord] = []
    lattice_log: list[dict] = []
    pool = None
    try:
        if cfg.parallel > 1 and cfg.n_users > 1:
            pool = ProcessPoolExecutor(max_workers=min(cfg.parallel, cfg.n_users))
        for t in range(cfg.rounds):
            if pool is not None:
                payloads = list(
                    pool.map(_client_task, clients, [w] * len(clients),
                             [t] * len(clients), [cfg] * len(clients))
                )
                # Parallel workers mutate copies; carry learner state back.
                for c, p in zip(clients, payloads):
                    if p.theta is not None:
                        c.net = PriorNet(cfg.lattice_dim, p.theta.copy())
                    if p.gen is not None:
                        c.gen = p.gen
            else:
                payloads = [client_round(c, w, t, cfg) for c in clients]
            w = server_round(payloads, w, {c.uid: c.seed_root for c in clients}, t, cfg.n_users)
            acc = evaluate(arch, w, test)
            dists = [p.distortion for p in payloads]
            snrs = [p.snr_db for p in payloads]
            records.append(
                RoundRecord(
                    t=t,
                    accuracy=acc,
                    mean_snr_db=float(np.mean(snrs)),
                    mean_distortion=float(np.mean(dists)),
                    total_bits=int(sum(p.bits for p in payloads)),
                    payloads=payloads,
                )
            )
            for p in payloads:
                if p.adapted or (t == 0 and p.gen is not None):
                    lattice_log.append(
                        {
                            "t": t,
                            "u": p.uid,
                            "gen": [float(v) for v in p.gen.ravel()],
                            "zeta": float(p.zeta),
                            "codebook_size": int(p.codebook_size),
                        }
                    )
    finally:
        if pool is not None:
            pool.shutdown()
    return FlResult(arch=arch, params=w, records=records, lattice_log=lattice_log)


def write_rounds_csv(records: list[RoundRecord], path: str) -> None:
    """One row per round; RFC 4180 CSV with a header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "accuracy", "mean_snr_db", "mean_distortion", "total_bits"])
        for r in records:
            writer.writerow(
                [r.t, repr(r.accuracy), repr(r.mean_snr_db), repr(r.mean_distortion), r.total_bits]
            )


def write_lattices_jsonl(entries: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


_MODEL_MAGIC = b"OLMD"
_MODEL_KIND_CODES = {"linear": 0, "mlp": 1}


def save_model(arch: ModelArch, params: np.ndarray, path: str) -> None:
    """Binary model: magic, kind, layer widths, then float64 parameters."""
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<II", _MODEL_KIND_CODES[arch.kind], len(arch.widths)))
        fh.write(struct.pack(f"<{len(arch.widths)}I", *arch.widths))
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.astype("<f8").tobytes())


def load_model(path: str) -> tuple[ModelArch, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    kind_code, n_widths = struct.unpack_from("<II", blob, 4)
    widths = struct.unpack_from(f"<{n_widths}I", blob, 12)
    (m,) = struct.unpack_from("<Q", blob, 12 + 4 * n_widths)
    params = np.frombuffer(blob, dtype="<f8", offset=20 + 4 * n_widths).copy()
    if params.size != m:
        raise ValueError(f"{path}: parameter count mismatch")
    kind = {v: k for k, v in _MODEL_KIND_CODES.items()}[kind_code]
    return ModelArch(kind, tuple(int(wd) for wd in widths)), params

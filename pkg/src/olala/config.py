"""Experiment configuration: flat key=value files plus inline overrides.

Parsing is strict: unknown keys are rejected and every value is coerced to
the key's declared type before validation, so error messages always name
the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .fl import QUANTIZER_KINDS
from .learning import LOSS_KINDS
from .models import MODEL_KINDS, ModelArch

# File/override key -> (dataclass field, type tag). Types: int, float, str,
# bool, lr (float or "auto").
CONFIG_KEYS = {
    "model": ("model", "str"),
    "dataset": ("dataset", "str"),
    "U": ("n_users", "int"),
    "L": ("lattice_dim", "int"),
    "R": ("rate", "float"),
    "rounds": ("rounds", "int"),
    "local_steps": ("local_steps", "int"),
    "adapt_every": ("adapt_every", "int"),
    "quantizer": ("quantizer", "str"),
    "loss_kind": ("loss_kind", "str"),
    "model_lr": ("model_lr", "float"),
    "lattice_lr": ("lattice_lr", "lr"),
    "lattice_epochs": ("lattice_epochs", "int"),
    "lattice_batches": ("lattice_batches", "int"),
    "overload_mode": ("overload_mode", "str"),
    "target_overload": ("target_overload", "float"),
    "heuristic_target": ("heuristic_target", "float"),
    "heuristic_filter_sigma": ("heuristic_filter_sigma", "float"),
    "include_zeta_bits": ("include_zeta_bits", "bool"),
    "reset_theta_each_round": ("reset_theta_each_round", "bool"),
    "master_seed": ("master_seed", "int"),
    "n_classes": ("n_classes", "int"),
    "synthetic_train_size": ("synthetic_train_size", "int"),
    "synthetic_test_size": ("synthetic_test_size", "int"),
    "synthetic_features": ("synthetic_features", "int"),
    "synthetic_noise": ("synthetic_noise", "float"),
    "train_images": ("train_images", "str"),
    "train_labels": ("train_labels", "str"),
    "test_images": ("test_images", "str"),
    "test_labels": ("test_labels", "str"),
    "mlp_hidden": ("mlp_hidden", "str"),
    "parallel": ("parallel", "int"),
    "verbosity": ("verbosity", "int"),
    "rates": ("rates", "str"),
    "quantizers": ("quantizers", "str"),
    "check_sdq_samples": ("check_sdq_samples", "int"),
    "check_distortion_trials": ("check_distortion_trials", "int"),
    "check_convergence_rounds": ("check_convergence_rounds", "int"),
    "check_convergence_seeds": ("check_convergence_seeds", "int"),
    "check_gamma_samples": ("check_gamma_samples", "int"),
}


@dataclass
class ExperimentConfig:
    """All experiment knobs; defaults give a small synthetic run."""

    model: str = "linear"
    dataset: str = "synthetic"  # synthetic | idx
    n_users: int = 5
    lattice_dim: int = 2
    rate: float = 3.0
    rounds: int = 20
    local_steps: int = 50
    adapt_every: int = 1  # in rounds; lattice refresh cadence for olala
    quantizer: str = "olala"
    loss_kind: str = "mse"
    model_lr: float = 0.1
    lattice_lr: float | None = None  # None = per-loss default
    lattice_epochs: int = 20
    lattice_batches: int = 8
    overload_mode: str = "fraction"
    target_overload: float = 0.005
    heuristic_target: float = 0.003
    heuristic_filter_sigma: float = 3.0
    include_zeta_bits: bool = True
    reset_theta_each_round: bool = False
    master_seed: int = 0
    n_classes: int = 10
    synthetic_train_size: int = 3000
    synthetic_test_size: int = 1000
    synthetic_features: int = 16
    synthetic_noise: float = 0.12
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    mlp_hidden: str = "32,32"
    parallel: int = 1
    verbosity: int = 0
    rates: str = "2,3,4"  # sweep verb only
    quantizers: str = "olala,static_per_user,static_global,fixed_hex"  # sweep verb only
    check_sdq_samples: int = 100_000
    check_distortion_trials: int = 100_000
    check_convergence_rounds: int = 2000
    check_convergence_seeds: int = 20
    check_gamma_samples: int = 200_000
    input_dim: int = field(default=0, repr=False)  # resolved from the dataset

    def arch(self) -> ModelArch:
        d = self.input_dim or self.synthetic_features
        if self.model == "linear":
            return ModelArch("linear", (d, self.n_classes))
        hidden = tuple(int(h) for h in self.mlp_hidden.split(","))
        return ModelArch("mlp", (d, *hidden, self.n_classes))

    def sweep_rates(self) -> list[float]:
        return [float(r) for r in self.rates.split(",") if r.strip()]

    def sweep_quantizers(self) -> list[str]:
        return [q.strip() for q in self.quantizers.split(",") if q.strip()]

    def validate(self) -> None:
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}")

        if self.model not in MODEL_KINDS:
            bad("model", f"must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.dataset not in ("synthetic", "idx"):
            bad("dataset", f"must be synthetic or idx, got {self.dataset!r}")
        if self.n_users < 1:
            bad("U", f"must be >= 1, got {self.n_users}")
        if not 1 <= self.lattice_dim <= 8:
            bad("L", f"must be in [1, 8], got {self.lattice_dim}")
        if not self.rate > 0:
            bad("R", f"must be positive, got {self.rate}")
        if self.rounds < 0:
            bad("rounds", f"must be >= 0, got {self.rounds}")
        if self.local_steps < 1:
            bad("local_steps", f"must be >= 1, got {self.local_steps}")
        if self.adapt_every < 1:
            bad("adapt_every", f"must be >= 1, got {self.adapt_every}")
        if self.quantizer not in QUANTIZER_KINDS:
            bad("quantizer", f"must be one of {QUANTIZER_KINDS}, got {self.quantizer!r}")
        if self.loss_kind not in LOSS_KINDS:
            bad("loss_kind", f"must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not self.model_lr > 0:
            bad("model_lr", f"must be positive, got {self.model_lr}")
        if self.lattice_lr is not None and not self.lattice_lr > 0:
            bad("lattice_lr", f"must be positive or auto, got {self.lattice_lr}")
        if self.lattice_epochs < 0:
            bad("lattice_epochs", f"must be >= 0, got {self.lattice_epochs}")
        if self.lattice_batches < 1:
            bad("lattice_batches", f"must be >= 1, got {self.lattice_batches}")
        if self.overload_mode not in ("fraction", "heuristic_minus1"):
            bad("overload_mode", f"unknown mode {self.overload_mode!r}")
        if not 0 <= self.target_overload < 1:
            bad("target_overload", f"must be in [0, 1), got {self.target_overload}")
        if not 0 <= self.heuristic_target < 1:
            bad("heuristic_target", f"must be in [0, 1), got {self.heuristic_target}")
        if not self.heuristic_filter_sigma > 0:
            bad("heuristic_filter_sigma", f"must be positive, got {self.heuristic_filter_sigma}")
        if self.n_classes < 2:
            bad("n_classes", f"must be >= 2, got {self.n_classes}")
        if self.dataset == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, key):
                    bad(key, "required when dataset=idx")
        else:
            if self.synthetic_train_size < 1 or self.synthetic_test_size < 1:
                bad("synthetic_train_size", "synthetic sizes must be >= 1")
            if self.synthetic_features < 1:
                bad("synthetic_features", f"must be >= 1, got {self.synthetic_features}")
        if self.model == "mlp":
            try:
                hidden = [int(h) for h in self.mlp_hidden.split(",")]
            except ValueError:
                bad("mlp_hidden", f"must be comma-separated ints, got {self.mlp_hidden!r}")
            if len(hidden) != 2 or any(h < 1 for h in hidden):
                bad("mlp_hidden", f"must list two positive widths, got {self.mlp_hidden!r}")
        if self.parallel < 1:
            bad("parallel", f"must be >= 1, got {self.parallel}")
        for key in (
            "check_sdq_samples", "check_distortion_trials", "check_convergence_rounds",
            "check_convergence_seeds", "check_gamma_samples",
        ):
            if getattr(self, key) < 1:
                bad(key, f"must be >= 1, got {getattr(self, key)}")
        try:
            rates = self.sweep_rates()
        except ValueError:
            bad("rates", f"must be comma-separated numbers, got {self.rates!r}")
        if any(not r > 0 or not math.isfinite(r) for r in rates):
            bad("rates", f"rates must be positive, got {self.rates!r}")
        for q in self.sweep_quantizers():
            if q not in QUANTIZER_KINDS:
                bad("quantizers", f"unknown quantizer {q!r}")


def _coerce(key: str, kind: str, text: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "lr":
            if text.lower() in ("auto", ""):
                return None
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def _apply(cfg: ExperimentConfig, key: str, value: str) -> None:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{key}: unknown configuration key")
    field_name, kind = CONFIG_KEYS[key]
    setattr(cfg, field_name, _coerce(key, kind, value))


def parse_config(
    path: str | None = None, overrides: list[str] | None = None
) -> ExperimentConfig:
    """Build a validated config from an optional file plus key=value overrides.

    File format: one `key = value` per line, blank lines and #-comments
    ignored.  Overrides win over file values.
    """
    cfg = ExperimentConfig()
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"config file {path!r}: {exc}") from exc
        for ln, line in enumerate(lines, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            _apply(cfg, key.strip(), value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, value = item.split("=", 1)
        _apply(cfg, key.strip(), value)
    cfg.validate()
    return cfg


def config_defaults_text() -> str:
    """Render every key with its default, for --help and the README."""
    cfg = ExperimentConfig()
    by_field = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    lines = []
    for key, (field_name, kind) in CONFIG_KEYS.items():
        default = by_field[field_name]
        if kind == "lr" and default is None:
            default = "auto"
        lines.append(f"{key} = {default}")
    return "\n".join(lines)

"""Experiment configuration: a flat ``key = value`` text format with two presets.

Lines are ``key = value``; ``#`` starts a comment; ``preset = tiny`` (first)
loads the tiny preset before the remaining keys are applied. Lists are
comma-separated. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field, fields

ABLATIONS = ("none", "mtp", "end", "bid", "gsp")
REGRET_MODES = ("fixed-alloc", "realloc")


class ConfigParseError(ValueError):
    pass


class ConfigInvariantError(ValueError):
    pass


def _default_gammas():
    return [round(0.2 * j, 10) for j in range(1, 11)]


@dataclass
class ExperimentConfig:
    seed: int = 0
    # marketplace
    n_poi: int = 20000
    n_creatives: int = 3
    d_poi: int = 32
    d_img: int = 32
    n_clusters: int = 64
    n_users: int = 2000
    N: int = 60
    M: int = 40
    K: int = 10
    B: int = 256
    n_train: int = 20000
    n_test: int = 2000
    n_rm_lists: int = 50000
    # tokenizer
    C: int = 3
    W: int = 1024
    tok_epochs: int = 50
    # generator
    L: int = 3
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    pretrain_epochs: int = 10
    mtp_shift: bool = False
    # reward model
    rm_epochs: int = 10
    rm_d_model: int = 32
    rm_pooled: bool = False
    # auction
    alpha: float = 1.2
    beta: float = 2.0
    beam_width: int = 64
    gmv_weight: float = 1.0
    lam_ux: float = 0.0
    marginal: str = "rerun"
    pg_steps: int = 2000
    pg_batch: int = 1
    # payment
    rho: float = 1.0
    lambda_init: float = 1.0
    n_v: int = 8
    gammas: list = field(default_factory=_default_gammas)
    n_random_misreports: int = 5
    pay_sessions: int = 200
    pay_rounds: int = 20
    pay_steps_per_round: int = 100
    regret_mode: str = "fixed-alloc"
    # training
    lr: float = 0.0024
    batch_size: int = 128
    ablation: str = "none"

    def validate(self) -> ExperimentConfig:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or isinstance(v, str) or f.name in ("seed", "lam_ux", "beta",
                                                                      "gmv_weight", "gammas"):
                continue
            if isinstance(v, (int, float)) and v <= 0:
                raise ConfigInvariantError(f"{f.name} must be positive, got {v}")
        if self.beta < 0 or self.lam_ux < 0 or self.gmv_weight < 0:
            raise ConfigInvariantError("beta, lam_ux and gmv_weight must be >= 0")
        if self.K > self.N + self.M:
            raise ConfigInvariantError(f"K ({self.K}) exceeds N + M ({self.N} + {self.M})")
        if self.N + self.M > self.n_poi:
            raise ConfigInvariantError(f"N + M ({self.N + self.M}) exceeds n_poi ({self.n_poi})")
        if self.W < 2:
            raise ConfigInvariantError("W must be >= 2")
        if self.d_model % self.n_heads:
            raise ConfigInvariantError("d_model must be divisible by n_heads")
        if self.ablation not in ABLATIONS:
            raise ConfigInvariantError(f"ablation must be one of {ABLATIONS}")
        if self.regret_mode not in REGRET_MODES:
            raise ConfigInvariantError(f"regret_mode must be one of {REGRET_MODES}")
        if self.marginal not in ("rerun", "beams"):
            raise ConfigInvariantError("marginal must be 'rerun' or 'beams'")
        if not self.gammas or min(self.gammas) <= 0:
            raise ConfigInvariantError("gammas must be a non-empty list of positive factors")
        return self

    def replace(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw).validate()

    @property
    def variant(self) -> str:
        return "EGA-V2" if self.ablation == "none" else f"EGA-{self.ablation}"


TINY = dict(n_poi=200, W=32, C=2, d_model=32, K=5, N=30, M=20, B=16, beam_width=16,
            d_poi=16, d_img=16, n_clusters=8, n_users=50, d_ff=64, n_train=400, n_test=100,
            n_rm_lists=4000, tok_epochs=200, pretrain_epochs=60, rm_epochs=20, pg_steps=2000,
            pay_sessions=200, pay_rounds=20, pay_steps_per_round=100)
PRESETS = {"tiny": TINY, "paper-shaped": {}}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigParseError(f"unknown preset {name!r}")
    return ExperimentConfig(**PRESETS[name]).validate()


def _coerce(name: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [float(x) for x in raw.split(",") if x.strip()]
    return raw


def parse(text: str) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if values:
                raise ConfigParseError(f"line {lineno}: preset must come before other keys")
            try:
                cfg = preset(raw)
            except ConfigParseError as e:
                raise ConfigParseError(f"line {lineno}: {e}") from None
            continue
        if key not in names:
            raise ConfigParseError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw, getattr(cfg, key))
        except ValueError as e:
            raise ConfigParseError(f"line {lineno}: bad value for {key}: {e}") from None
    return dataclasses.replace(cfg, **values).validate()


def load_config(path=None, env=None) -> ExperimentConfig:
    """Read a config file (defaults when ``path`` is None); ``GENAD_SEED`` overrides the seed."""
    env = os.environ if env is None else env
    text = "" if path is None else open(path, encoding="utf-8").read()
    cfg = parse(text)
    if env.get("GENAD_SEED"):
        cfg = cfg.replace(seed=int(env["GENAD_SEED"]))
    return cfg


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: ExperimentConfig, keys=None) -> str:
    """Canonical form: every field (or ``keys``) in declaration order."""
    keys = [f.name for f in fields(cfg)] if keys is None else list(keys)
    return "".join(f"{k} = {_fmt(getattr(cfg, k))}\n" for k in keys)


# fields each pipeline stage depends on (cumulative along the pipeline)
STAGE_FIELDS = {
    "data": ["seed", "n_poi", "n_creatives", "d_poi", "d_img", "n_clusters", "n_users", "N", "M",
             "K", "B", "n_train", "n_test"],
    "tokenizer": ["C", "W", "tok_epochs", "lr", "batch_size"],
    "pretrain": ["L", "d_model", "n_heads", "d_ff", "pretrain_epochs", "mtp_shift", "ablation"],
    "rm": ["n_rm_lists", "rm_epochs", "rm_d_model", "rm_pooled"],
    "alloc": ["alpha", "beta", "beam_width", "gmv_weight", "lam_ux", "marginal", "pg_steps",
              "pg_batch"],
    "pay": ["rho", "lambda_init", "n_v", "gammas", "n_random_misreports", "pay_sessions",
            "pay_rounds", "pay_steps_per_round", "regret_mode"],
}
STAGES = list(STAGE_FIELDS)


def stage_hash(cfg: ExperimentConfig, stage: str) -> str:
    keys = []
    for s in STAGES:
        keys += STAGE_FIELDS[s]
        if s == stage:
            break
    return hashlib.sha256(serialize(cfg, keys).encode()).hexdigest()[:16]


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode()).hexdigest()[:16]

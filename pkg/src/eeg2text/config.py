"""Run configuration: flat key-value files with dotted section keys.

Files hold ``key = value`` lines (``#`` comments allowed); command-line
overrides use the same keys. Every key except ``seed`` has a documented
default; the seed is mandatory so no run ever depends on wall-clock state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .brainmod import BrainConfig
from .refine import RefinePolicy


class ConfigError(ValueError):
    """Configuration file or overrides cannot be interpreted."""


def parse_config_file(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def _to_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: cannot read {value!r} as a boolean")


@dataclass
class LangConfig:
    d_model: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    max_src: int = 64
    max_len: int = 16


@dataclass
class StageParams:
    epochs: int
    batch_size: int
    lr: float
    train_subject_vectors: bool = True
    fine_tune_brain: bool = False
    target_dev_fraction: float | None = None
    target_dev_loss: float | None = None


@dataclass
class SplitParams:
    train_ratio: float = 0.8
    dev_ratio: float = 0.1
    test_ratio: float = 0.1
    split_seed: int = 13

    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.dev_ratio, self.test_ratio)


@dataclass
class DecodeParams:
    beam_width: int = 4
    max_len: int = 16
    length_alpha: float = 0.0
    use_beam: bool = True


@dataclass
class RunConfig:
    seed: int
    data_path: str = ""
    embeddings_path: str = ""
    out_dir: str = "runs/default"
    split: SplitParams = field(default_factory=SplitParams)
    brain: BrainConfig = field(default_factory=BrainConfig)
    lang: LangConfig = field(default_factory=LangConfig)
    stage1: StageParams = field(default_factory=lambda: StageParams(50, 8, 2e-3))
    stage2: StageParams = field(default_factory=lambda: StageParams(60, 8, 2e-3))
    decode: DecodeParams = field(default_factory=DecodeParams)
    refine_policy: RefinePolicy = field(default_factory=RefinePolicy)

    def brain_checkpoint(self) -> Path:
        return Path(self.out_dir) / "brain.ckpt"

    def seq2seq_checkpoint(self) -> Path:
        return Path(self.out_dir) / "seq2seq.ckpt"

    def loss_log(self, stage: int) -> Path:
        return Path(self.out_dir) / f"stage{stage}_loss.ndjson"


# key -> (section attribute path, type tag); "" marks top-level fields
_SCHEMA: dict[str, tuple[str, str]] = {
    "seed": ("seed", "int"),
    "data.path": ("data_path", "str"),
    "embeddings.path": ("embeddings_path", "str"),
    "out.dir": ("out_dir", "str"),
    "data.train_ratio": ("split.train_ratio", "float"),
    "data.dev_ratio": ("split.dev_ratio", "float"),
    "data.test_ratio": ("split.test_ratio", "float"),
    "data.split_seed": ("split.split_seed", "int"),
    "brain.channels": ("brain.channels", "int"),
    "brain.gru_hidden": ("brain.gru_hidden", "int"),
    "brain.proj_dim": ("brain.proj_dim", "int"),
    "brain.d_model": ("brain.d_model", "int"),
    "brain.layers": ("brain.layers", "int"),
    "brain.heads": ("brain.heads", "int"),
    "brain.ffn_mult": ("brain.ffn_mult", "int"),
    "brain.dropout": ("brain.dropout", "float"),
    "brain.embed_dim": ("brain.embed_dim", "int"),
    "brain.max_words": ("brain.max_words", "int"),
    "lang.d_model": ("lang.d_model", "int"),
    "lang.enc_layers": ("lang.enc_layers", "int"),
    "lang.dec_layers": ("lang.dec_layers", "int"),
    "lang.heads": ("lang.heads", "int"),
    "lang.ffn_mult": ("lang.ffn_mult", "int"),
    "lang.dropout": ("lang.dropout", "float"),
    "lang.max_src": ("lang.max_src", "int"),
    "lang.max_len": ("lang.max_len", "int"),
    "stage1.epochs": ("stage1.epochs", "int"),
    "stage1.batch_size": ("stage1.batch_size", "int"),
    "stage1.lr": ("stage1.lr", "float"),
    "stage1.train_subject_vectors": ("stage1.train_subject_vectors", "bool"),
    "stage1.target_dev_fraction": ("stage1.target_dev_fraction", "optfloat"),
    "stage2.epochs": ("stage2.epochs", "int"),
    "stage2.batch_size": ("stage2.batch_size", "int"),
    "stage2.lr": ("stage2.lr", "float"),
    "stage2.fine_tune_brain": ("stage2.fine_tune_brain", "bool"),
    "stage2.target_dev_loss": ("stage2.target_dev_loss", "optfloat"),
    "decode.beam_width": ("decode.beam_width", "int"),
    "decode.max_len": ("decode.max_len", "int"),
    "decode.length_alpha": ("decode.length_alpha", "float"),
    "decode.use_beam": ("decode.use_beam", "bool"),
    "refine.kind": ("refine.kind", "str"),
    "refine.endpoint": ("refine.endpoint", "str"),
    "refine.model": ("refine.model", "str"),
    "refine.timeout": ("refine.timeout", "float"),
    "refine.fallback": ("refine.fallback", "bool"),
    "refine.template": ("refine.prompt_template", "str"),
}


def _convert(key: str, value: str, kind: str):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "optfloat":
            return None if value == "" else float(value)
        if kind == "bool":
            return _to_bool(value, key)
        return value
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind}") from exc


def build_run_config(entries: dict[str, str]) -> RunConfig:
    """Materialize a RunConfig from string entries (file plus overrides)."""
    unknown = sorted(set(entries) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "seed" not in entries:
        raise ConfigError("seed is mandatory (no wall-clock default)")

    plain: dict[str, object] = {}
    brain: dict[str, object] = {}
    refine_kw: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {
        "split": {}, "lang": {}, "stage1": {}, "stage2": {}, "decode": {},
    }
    for key, raw in entries.items():
        target, kind = _SCHEMA[key]
        value = _convert(key, raw, kind)
        if "." not in target:
            plain[target] = value
            continue
        section, attr = target.split(".", 1)
        if section == "brain":
            brain[attr] = value
        elif section == "refine":
            refine_kw[attr] = value
        else:
            sections[section][attr] = value

    try:
        config = RunConfig(seed=int(plain.pop("seed")))
        for name, value in plain.items():
            setattr(config, name, value)
        if brain:
            config.brain = BrainConfig(**{**config.brain.to_dict(), **brain})
        if refine_kw:
            config.refine_policy = RefinePolicy(**refine_kw)
        for name, values in sections.items():
            section_obj = getattr(config, name if name != "split" else "split")
            for attr, value in values.items():
                setattr(section_obj, attr, value)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def load_run_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    entries: dict[str, str] = {}
    if path is not None:
        entries.update(parse_config_file(path))
    if overrides:
        entries.update(overrides)
    return build_run_config(entries)


def default_config_text(seed: int = 0) -> str:
    """A complete config file with every key at its default."""
    lines = [f"seed = {seed}"]
    defaults = RunConfig(seed=seed)
    for key, (target, kind) in _SCHEMA.items():
        if key == "seed":
            continue
        obj: object = defaults
        for part in target.split("."):
            if part == "refine":
                obj = defaults.refine_policy
            else:
                obj = getattr(obj, part)
        value = "" if obj is None else obj
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

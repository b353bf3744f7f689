"""Layered run configuration: file values + flag overrides over defaults.

The file format is a TOML-like subset, documented in the README: `[section]`
headers, `key = value` lines with JSON-encoded values (numbers, booleans,
quoted strings, flat lists), and `#` comments. Unknown sections or keys are
rejected; every error in a file is reported at once. The fully resolved
config is echoed into each run directory and re-running from the echo
reproduces the run.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional

import figgen
from figgen.autoencoder.model import AutoencoderConfig
from figgen.diffusion.sampler import SamplerConfig
from figgen.diffusion.schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T
from figgen.diffusion.unet import UNetConfig
from figgen.text_encoder import TextEncoderConfig
from figgen.trainer import TrainConfig


class ConfigError(ValueError):
    pass


_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"
_INT_LIST = "int_list"

# key -> (kind, default); trainer defaults are stage-dependent (see TrainConfig).
_AE = AutoencoderConfig()
_UNET = UNetConfig()
_TEXT = TextEncoderConfig()
_SAMPLER = SamplerConfig()

SCHEMA: Dict[str, Dict[str, tuple]] = {
    "run": {
        "version": (_STR, figgen.__version__),
    },
    "corpus": {
        "resolution": (_INT, 512),
        "vocab_size": (_INT, 16384),
        "l_max": (_INT, 256),
        "ratio_lo": (_FLOAT, 0.5),
        "ratio_hi": (_FLOAT, 2.0),
        "val_fraction": (_FLOAT, 0.2),
        "seed": (_INT, 0),
    },
    "autoencoder": {
        "input_resolution": (_INT, _AE.input_resolution),
        "embed_dim": (_INT, _AE.embed_dim),
        "base_channels": (_INT, _AE.base_channels),
        "num_res_blocks": (_INT, _AE.num_res_blocks),
        "channel_mult": (_INT_LIST, list(_AE.channel_mult)),
        "dropout": (_FLOAT, _AE.dropout),
        "disc_weight": (_FLOAT, _AE.disc_weight),
        "vgg_weight": (_FLOAT, _AE.vgg_weight),
        "ocr_weight": (_FLOAT, _AE.ocr_weight),
        "kl_weight": (_FLOAT, _AE.kl_weight),
    },
    "text_encoder": {
        "num_layers": (_INT, _TEXT.num_layers),
        "width": (_INT, _TEXT.width),
        "num_heads": (_INT, _TEXT.num_heads),
        "l_max": (_INT, _TEXT.l_max),
        "vocab_size": (_INT, _TEXT.vocab_size),
    },
    "unet": {
        "latent_size": (_INT, _UNET.latent_size),
        "in_channels": (_INT, _UNET.in_channels),
        "base_channels": (_INT, _UNET.base_channels),
        "num_res_blocks": (_INT, _UNET.num_res_blocks),
        "attention_resolutions": (_INT_LIST, list(_UNET.attention_resolutions)),
        "channel_mult": (_INT_LIST, list(_UNET.channel_mult)),
        "dropout": (_FLOAT, _UNET.dropout),
        "context_dim": (_INT, _UNET.context_dim),
        "num_heads": (_INT, _UNET.num_heads),
        "time_embed_dim": (_INT, _UNET.time_embed_dim),
    },
    "schedule": {
        "num_steps": (_INT, DEFAULT_T),
        "beta_start": (_FLOAT, DEFAULT_BETA_START),
        "beta_end": (_FLOAT, DEFAULT_BETA_END),
    },
    "sampler": {
        "num_steps": (_INT, _SAMPLER.num_steps),
        "eta": (_FLOAT, _SAMPLER.eta),
        "cfg_scale": (_FLOAT, _SAMPLER.cfg_scale),
        "seed": (_INT, _SAMPLER.seed),
    },
    "trainer": {
        "batch_size": (_INT, None),
        "micro_batch_size": (_INT, 0),  # 0 = same as batch_size
        "learning_rate": (_FLOAT, None),
        "adam_beta1": (_FLOAT, 0.9),
        "adam_beta2": (_FLOAT, 0.999),
        "adam_eps": (_FLOAT, 1e-8),
        "warmup_steps": (_INT, None),
        "max_steps": (_INT, 1000),
        "seed": (_INT, 0),
        "checkpoint_every": (_INT, 1000),
        "grad_clip": (_FLOAT, 0.0),
        "p_uncond": (_FLOAT, 0.1),
        "latent_mode": (_STR, "sample"),
    },
    "metrics": {
        "n": (_INT, 256),
        "extractor_seed": (_INT, 909),
        "num_classes": (_INT, 16),
    },
}


def _check_value(kind: str, value):
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _STR:
        return isinstance(value, str)
    if kind == _BOOL:
        return isinstance(value, bool)
    if kind == _INT_LIST:
        return isinstance(value, list) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        )
    raise AssertionError(kind)


class RunConfig:
    """Explicitly set values per section; defaults fill in at build time."""

    def __init__(self, values: Optional[Dict[str, Dict]] = None):
        self.values: Dict[str, Dict] = values or {}

    # ---------- parsing ----------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), source=str(path))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: Dict[str, Dict] = {}
        errors: List[str] = []
        section = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SCHEMA:
                    errors.append(f"{source}:{lineno}: unknown section [{section}]")
                    section = None
                continue
            if "=" not in line:
                errors.append(f"{source}:{lineno}: expected 'key = value'")
                continue
            if section is None:
                errors.append(f"{source}:{lineno}: key outside a known [section]")
                continue
            key, _, rhs = line.partition("=")
            key = key.strip()
            if key not in SCHEMA[section]:
                errors.append(f"{source}:{lineno}: unknown key {section}.{key}")
                continue
            try:
                value = json.loads(rhs.strip())
            except json.JSONDecodeError:
                errors.append(f"{source}:{lineno}: value for {section}.{key} is not valid JSON")
                continue
            kind = SCHEMA[section][key][0]
            if not _check_value(kind, value):
                errors.append(f"{source}:{lineno}: {section}.{key} must be of type {kind}")
                continue
            values.setdefault(section, {})[key] = value
        if errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
        return cls(values)

    def apply_overrides(self, overrides: List[str]) -> None:
        """Flag-level `section.key=value` overrides; all errors reported at once."""
        errors = []
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                errors.append(f"--set expects section.key=value, got {item!r}")
                continue
            dotted, _, rhs = item.partition("=")
            section, _, key = dotted.strip().partition(".")
            if section not in SCHEMA or key not in SCHEMA[section]:
                errors.append(f"unknown key {section}.{key}")
                continue
            try:
                value = json.loads(rhs.strip())
            except json.JSONDecodeError:
                value = rhs.strip()
            kind = SCHEMA[section][key][0]
            if not _check_value(kind, value):
                errors.append(f"{section}.{key} must be of type {kind}")
                continue
            self.values.setdefault(section, {})[key] = value
        if errors:
            raise ConfigError("invalid overrides:\n  " + "\n  ".join(errors))

    # ---------- resolution ----------

    def get(self, section: str, key: str, stage: Optional[str] = None):
        if section in self.values and key in self.values[section]:
            return self.values[section][key]
        kind, default = SCHEMA[section][key]
        if default is None:
            assert section == "trainer" and stage is not None
            return getattr(TrainConfig.for_stage(stage), key)
        return default

    def resolved(self, stage: Optional[str] = None) -> Dict[str, Dict]:
        out: Dict[str, Dict] = {}
        for section, keys in SCHEMA.items():
            if section == "trainer" and stage is None:
                continue
            out[section] = {key: self.get(section, key, stage) for key in keys}
        if "run" in out:
            out["run"]["version"] = figgen.__version__
        return out

    # ---------- builders ----------

    def autoencoder_config(self) -> AutoencoderConfig:
        s = {k: self.get("autoencoder", k) for k in SCHEMA["autoencoder"]}
        s["channel_mult"] = tuple(s["channel_mult"])
        return AutoencoderConfig(**s)

    def unet_config(self) -> UNetConfig:
        s = {k: self.get("unet", k) for k in SCHEMA["unet"]}
        s["attention_resolutions"] = tuple(s["attention_resolutions"])
        s["channel_mult"] = tuple(s["channel_mult"])
        return UNetConfig(**s)

    def text_config(self) -> TextEncoderConfig:
        return TextEncoderConfig(**{k: self.get("text_encoder", k) for k in SCHEMA["text_encoder"]})

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(**{k: self.get("sampler", k) for k in SCHEMA["sampler"]})

    def train_config(self, stage: str) -> TrainConfig:
        s = {k: self.get("trainer", k, stage) for k in SCHEMA["trainer"]}
        micro = s.pop("micro_batch_size")
        return TrainConfig(stage=stage, micro_batch_size=micro or None, **s)

    # ---------- echo ----------

    def to_toml(self, stage: Optional[str] = None) -> str:
        lines = [f"# figgen {figgen.__version__} resolved run config"]
        for section, keys in self.resolved(stage).items():
            lines.append("")
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    def write_echo(self, out_dir, stage: Optional[str] = None) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.toml"
        path.write_text(self.to_toml(stage), encoding="utf-8")
        (out_dir / "VERSION").write_text(figgen.__version__ + "\n", encoding="utf-8")
        return path


def load_layered(config_path, overrides: List[str]) -> RunConfig:
    cfg = RunConfig.from_file(config_path) if config_path else RunConfig()
    cfg.apply_overrides(list(overrides or []))
    return cfg

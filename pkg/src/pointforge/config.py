"""Dotted-key run configuration: defaults, file parsing, validation.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Every key must be registered below; unknown keys are hard errors so that a
typo cannot silently fall back to a default in the middle of an ablation.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value, or impossible shape."""


# Registered keys and their defaults. A default of REQUIRED means the key has
# no fallback: commands that need it fail with exit code 2 unless it is given
# in the file or on the command line.
REQUIRED = object()

DEFAULTS: dict[str, object] = {
    # data / harmonization
    "data.canonical_grid": 0.02,
    "harmonize.strategy": "fixed_rescale",  # origin | jitter | fixed_rescale
    # modality blinding
    "modality.color_drop": 0.3,
    "modality.normal_drop": 0.3,
    "modality.point_drop": 0.2,
    "modality.stage": "at_loading",
    # rotary positional encoding
    "rope.enabled": True,
    "rope.base": 10.0,
    "rope.jitter_degree": 1.2,
    "rope.scaling_degree": 1.2,
    "rope.perturb": True,
    # encoder shape (comma lists, one entry per stage)
    "encoder.channels": "24,48",
    "encoder.heads": "4,8",
    "encoder.blocks": "2,2",
    "encoder.window": 16,
    # distillation
    "distill.prototypes": 256,
    "distill.tau_student": 0.1,
    "distill.tau_teacher": 0.04,
    "distill.momentum": 0.99,
    "distill.center_momentum": 0.9,
    "distill.mask_ratio": 0.4,
    "distill.mask_patch": 16,
    "distill.n_local": 2,
    "distill.local_radius": 0.5,
    # augmentation policy
    "aug.object_rotation": "so3",  # so3 | mild
    "aug.frame_aggregate": True,
    "aug.scale_shift": True,
    # optimizer
    "train.steps": REQUIRED,
    "train.lr": 1e-3,
    "train.weight_decay": 0.01,
    "train.clip_norm": 3.0,
    # linear probe
    "probe.epochs": 100,
    "probe.lr": 0.1,
}

_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False,
               "on": True, "off": False, "1": True, "0": False}


def _convert(raw: str, like: object) -> object:
    raw = raw.strip()
    if isinstance(like, bool):
        word = raw.lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"expected boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    if isinstance(like, int) and not isinstance(like, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"expected integer, got {raw!r}") from exc
    if isinstance(like, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"expected number, got {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict[str, object]:
    """Parse dotted-key assignments; raise ConfigError on unknown keys."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        like = DEFAULTS[key]
        if like is REQUIRED:
            # required keys are typed by name
            like = 0 if key == "train.steps" else ""
        try:
            values[key] = _convert(raw, like)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
    return values


def load_config(path: str | Path | None) -> "Config":
    cfg = Config()
    if path is not None:
        cfg.update(parse_config_text(Path(path).read_text()))
    return cfg


class Config:
    """Resolved configuration: registry defaults overlaid with file/CLI values."""

    def __init__(self, values: dict[str, object] | None = None):
        self._values: dict[str, object] = {}
        if values:
            self.update(values)

    def update(self, values: dict[str, object]) -> None:
        for key, val in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            self._values[key] = val

    def set(self, key: str, val: object) -> None:
        self.update({key: val})

    def get(self, key: str) -> object:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        if key in self._values:
            return self._values[key]
        default = DEFAULTS[key]
        if default is REQUIRED:
            raise ConfigError(f"missing config key: {key}")
        return default

    def has(self, key: str) -> bool:
        return key in self._values or DEFAULTS.get(key) is not REQUIRED

    def int_list(self, key: str) -> list[int]:
        raw = str(self.get(key))
        try:
            return [int(part) for part in raw.split(",") if part.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from exc

    def snapshot(self) -> dict[str, object]:
        """Full resolved key->value map (required-but-missing keys omitted)."""
        out = {}
        for key in DEFAULTS:
            if key in self._values:
                out[key] = self._values[key]
            elif DEFAULTS[key] is not REQUIRED:
                out[key] = DEFAULTS[key]
        return out

    def copy(self) -> "Config":
        return Config(dict(self._values))

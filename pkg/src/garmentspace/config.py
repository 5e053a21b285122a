"""Run presets and config-file loading.

Two presets ship: "desk" (512-sample corpora, 32-dim latent/PCA, sized for
a desktop) and "paper" (published scale: 8000 samples, K=100, k=200, 20000
epochs). A config file in a TOML-subset syntax (tables, scalars, arrays,
comments) can override any field per preset; command-line flags override
the file. Python 3.10 lacks tomllib and the sandbox mirror has no tomli,
hence the small built-in reader.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .drape import DrapeConfig
from .neural import TrainConfig
from .styleretarget import SolverSettings


@dataclass(eq=False)
class Preset:
    name: str
    n_samples: int
    target_edge: float
    pca_k: int
    latent_dim: int
    style_embed_dim: int
    split_ratio: float
    joint_train: TrainConfig
    siamese_train: TrainConfig
    drape: DrapeConfig = field(default_factory=DrapeConfig)
    retarget: SolverSettings = field(default_factory=SolverSettings)
    use_paper_widths: bool = False
    spearman_target: float = 0.8  # repo target for the style metric, not a paper number


def desk_preset() -> Preset:
    return Preset(
        name="desk",
        n_samples=512,
        target_edge=0.035,
        pca_k=32,
        latent_dim=32,
        style_embed_dim=32,
        split_ratio=0.95,
        joint_train=TrainConfig(lr=0.05, epochs=2000, batch_size=32, seed=0),
        siamese_train=TrainConfig(lr=0.01, epochs=2000, batch_size=64, seed=0),
    )


def paper_preset() -> Preset:
    return Preset(
        name="paper",
        n_samples=8000,
        target_edge=0.035,
        pca_k=200,
        latent_dim=100,
        style_embed_dim=100,
        split_ratio=0.95,
        joint_train=TrainConfig(lr=0.1, epochs=20000, batch_size=64, seed=0),
        siamese_train=TrainConfig(lr=0.03, epochs=20000, batch_size=64, seed=0),
        use_paper_widths=True,
    )


PRESETS = {"desk": desk_preset, "paper": paper_preset}


def parse_toml_subset(text: str) -> dict:
    """Parse tables, scalar values, and flat arrays; enough for run configs."""
    root: dict = {}
    table = root
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            table = root
            for part in name.split("."):
                table = table.setdefault(part, {})
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        table[key.strip()] = _parse_value(value.strip(), lineno)
    return root


def _parse_value(tok: str, lineno: int):
    if tok.startswith("[") and tok.endswith("]"):
        inner = tok[1:-1].strip()
        return [_parse_value(t.strip(), lineno) for t in inner.split(",")] if inner else []
    if tok in ("true", "false"):
        return tok == "true"
    if len(tok) >= 2 and tok[0] == tok[-1] and tok[0] in "\"'":
        return tok[1:-1]
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError as err:
        raise ValueError(f"config line {lineno}: cannot parse value {tok!r}") from err


def _apply(obj, values: dict):
    for key, val in values.items():
        if not hasattr(obj, key):
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if isinstance(current, (TrainConfig, DrapeConfig, SolverSettings)):
            if not isinstance(val, dict):
                raise ValueError(f"config key {key!r} must be a table")
            _apply(current, val)
        else:
            setattr(obj, key, type(current)(val) if current is not None and not isinstance(val, type(current)) else val)
    return obj


def load_preset(name: str, config_path: str | Path | None = None) -> Preset:
    """Build a preset, applying the matching section of a config file."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]()
    if config_path:
        data = parse_toml_subset(Path(config_path).read_text())
        section = data.get(name, {})
        _apply(preset, section)
    return preset

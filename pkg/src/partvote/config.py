"""Run configuration: a flat key=value file, every key overridable from the
command line. The full config is embedded in every results file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

CONFIG_VERSION = 1


@dataclass
class RunConfig:
    # reproducibility
    seed: int = 0

    # dataset
    classes: str = "sphere,box,cylinder,torus"
    n_train_per_class: int = 50
    n_test_per_class: int = 10
    n_points: int = 512
    shape_noise: float = 0.01
    scale_min: float = 0.8
    scale_max: float = 1.25
    data_dir: str = ""           # empty: synthetic corpus

    # part growing / connectivity
    angle_threshold: float = 2.0
    max_parts: int = 128
    points_per_part: int = 128
    knn: int = 12
    real_data: bool = False
    real_data_multiplier: float = 3.0
    cone_half_angle_deg: float = 20.0
    hemisphere_margin_deg: float = 30.0
    use_spatial_fallback: bool = True

    # architecture
    encoder_widths: str = "64,128,256"
    conv_layers: int = 4
    conv_width: int = 256
    kernel_count: int = 15
    kernel_sigma: float = 0.7
    kernel_origin: bool = True
    use_lrf: bool = True
    layer: str = "skpconv"       # skpconv | kpconv
    pooling: str = "votemaxpool"  # votemaxpool | maxpool

    # voting
    num_clusters: int = 5
    cluster_radius: float = 0.25
    vote_loss_weight: float = 1.0

    # training
    lr: float = 1e-3
    epochs: int = 30
    batch_objects: int = 8
    resegment: bool = True       # re-grow part graphs every epoch
    augment_occlusion: bool = False
    augment_normal_noise: float = 0.0
    augment_background: bool = False

    # output
    out_dir: str = "runs"

    def __post_init__(self):
        if self.layer not in ("skpconv", "kpconv"):
            raise ValueError(f"layer must be skpconv or kpconv, got {self.layer!r}")
        if self.pooling not in ("votemaxpool", "maxpool"):
            raise ValueError(f"pooling must be votemaxpool or maxpool, got {self.pooling!r}")

    # -- derived views -------------------------------------------------------

    @property
    def class_list(self) -> list[str]:
        return [c.strip() for c in self.classes.split(",") if c.strip()]

    @property
    def encoder_width_list(self) -> list[int]:
        return [int(w) for w in self.encoder_widths.split(",") if w.strip()]

    @property
    def cone_half_angle(self) -> float:
        return math.radians(self.cone_half_angle_deg)

    @property
    def hemisphere_margin(self) -> float:
        return math.radians(self.hemisphere_margin_deg)

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"config_version={CONFIG_VERSION}"]
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        values.pop("config_version", None)
        return cls._from_strings(values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    @classmethod
    def _from_strings(cls, values: dict[str, str]) -> "RunConfig":
        cfg = cls()
        cfg.apply_overrides(values)
        return cfg

    def apply_overrides(self, values: dict[str, str]):
        by_name = {f.name: f for f in fields(self)}
        for key, value in values.items():
            if key not in by_name:
                raise KeyError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(value, by_name[key].type))
        self.__post_init__()


def _coerce(value: str, type_name):
    name = type_name if isinstance(type_name, str) else type_name.__name__
    if name == "bool":
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if name == "int":
        return int(value)
    if name == "float":
        return float(value)
    return str(value)


def desk_config(**overrides) -> RunConfig:
    """A small configuration that trains in minutes on a laptop CPU."""
    cfg = RunConfig(
        max_parts=24,
        points_per_part=32,
        encoder_widths="32,64",
        conv_width=64,
        epochs=30,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg

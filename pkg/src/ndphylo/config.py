"""Experiment configuration: TOML file, defaults, overrides and a stable hash."""

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class Config:
    # clustering
    eta: float = 0.7
    spectrum: str = "standard"        # "standard" (I - N) or "adjacency" (N)
    distance: str = "normalized"      # cosine distance (1-cos)/2 or "raw" 1-cos
    bandwidth: str = "local"          # "local" KDE scaling or "global"
    # sensor noise
    alpha: float = 6.0
    sigma0: float = 5.0
    levels: int = 4
    denoiser: str = "wavelet"
    # network
    K: int = 3
    feature_mode: str = "pixel"
    center: bool = True
    lr: float = 0.01
    epochs: int = 100
    hidden: int = 16
    dropout: float = 0.5
    weight_decay: float = 5e-4
    patience: int = 10
    # link prediction
    aggregation: str = "sum"
    rank: int = 2
    # synthesis
    cls: str = "photometric"
    n_sources: int = 60
    side: int = 96
    configs: tuple = ("A", "B", "C", "D", "E", "F")
    test_fraction: float = 0.4
    val_fraction: float = 0.1
    forests: int = 0
    amplitude: float = 0.02

    _CHOICES = {
        "spectrum": ("standard", "adjacency"),
        "distance": ("normalized", "raw"),
        "bandwidth": ("local", "global"),
        "denoiser": ("wavelet", "spatial"),
        "feature_mode": ("pixel", "prnu", "descriptor", "levels", "hybrid", "stats"),
        "aggregation": ("sum", "max"),
        "cls": ("photometric", "geometric", "mixed"),
    }

    def __post_init__(self):
        self.configs = tuple(self.configs)
        for key, allowed in self._CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ValueError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if not self.alpha > 0 or not self.sigma0 > 0:
            raise ValueError("alpha and sigma0 must be positive")
        if self.K < 1 or self.rank < 1 or self.n_sources < 1:
            raise ValueError("K, rank and n_sources must be >= 1")
        if not 0 < self.test_fraction < 1 or not 0 <= self.val_fraction < 1:
            raise ValueError("split fractions out of range")

    @property
    def noise_kw(self):
        return {"sigma0": self.sigma0, "alpha": self.alpha, "levels": self.levels,
                "method": self.denoiser}

    @property
    def hp(self):
        return {"lr": self.lr, "epochs": self.epochs, "hidden": self.hidden,
                "dropout": self.dropout, "weight_decay": self.weight_decay,
                "patience": self.patience, "K": self.K}

    def to_dict(self):
        d = asdict(self)
        d["configs"] = list(self.configs)
        return d

    def digest(self):
        """sha256 of the canonical JSON form, first 16 hex digits."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **overrides):
        d = self.to_dict()
        for k, v in overrides.items():
            if v is not None:
                if k not in d:
                    raise KeyError(f"unknown config key {k!r}")
                d[k] = v
        return Config(**d)


def config_keys():
    return [f.name for f in fields(Config)]


def from_mapping(data):
    """Build a config from a flat mapping; a ``[config]`` table is accepted too."""
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    unknown = set(data) - set(config_keys())
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    return Config(**data)


def load_config(path=None, **overrides):
    if path is None:
        cfg = Config()
    else:
        with open(path, "rb") as fh:
            cfg = from_mapping(tomllib.load(fh))
    return cfg.replace(**overrides)

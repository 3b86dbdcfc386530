"""Flat ``key = value`` run configuration.

One pair per line, ``#`` starts a comment.  Unknown keys are an error.
Datasets come either from CSV paths (``train_path``, ``val_path``,
``test_path``) or from the synthetic generator (``gen_*`` keys).
"""
import os
from dataclasses import dataclass, fields

from .data import DatasetError, generate_synthetic, inject_noise, load_csv
from .pgm import ConfigError, TrainConfig

_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}

# config-file spelling -> TrainConfig attribute
_TRAIN_KEYS = {f.name: f.name for f in fields(TrainConfig)}
_TRAIN_KEYS["lambda"] = "lam"
del _TRAIN_KEYS["lam"]

PATH_KEYS = ("train_path", "val_path", "test_path")
GEN_KEYS = ("gen_n", "gen_dim", "gen_classes", "gen_separation")


@dataclass
class DataSpec:
    train_path: str = None
    val_path: str = None
    test_path: str = None
    num_classes: int = None
    gen_n: int = None
    gen_val_n: int = 1000
    gen_test_n: int = 5000
    gen_dim: int = None
    gen_classes: int = None
    gen_separation: float = None
    gen_seed: int = 0
    noise_fraction: float = 0.0
    noise_mode: str = "label_flip"
    noise_sigma: float = 1.0
    noise_seed: int = 0
    output_dir: str = None


_DATA_TYPES = {f.name: f.type for f in fields(DataSpec)}


@dataclass
class RunConfig:
    train: TrainConfig
    data: DataSpec
    base_dir: str = "."

    def _path(self, key):
        value = getattr(self.data, key)
        return value if os.path.isabs(value) else os.path.join(self.base_dir, value)

    @property
    def output_dir(self):
        return self._path("output_dir")

    def load_datasets(self, data_seed_offset=0):
        """(train, val, test); noise is injected into the training split only."""
        d = self.data
        if d.train_path is not None:
            out = []
            for key in PATH_KEYS:
                try:
                    out.append(load_csv(self._path(key), d.num_classes))
                except OSError as exc:
                    raise ConfigError(f"{key}: cannot read {getattr(d, key)!r} ({exc.strerror})") from None
                except DatasetError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
            train, val, test = out
        else:
            seed = d.gen_seed + data_seed_offset
            mk = lambda n, k: generate_synthetic(n, d.gen_dim, d.gen_classes, d.gen_separation,
                                                 seed=seed * 10 + k, centers_seed=seed)
            try:
                train, val, test = mk(d.gen_n, 1), mk(d.gen_val_n, 2), mk(d.gen_test_n, 3)
            except DatasetError as exc:
                raise ConfigError(str(exc)) from None
        if d.noise_fraction > 0:
            try:
                train = inject_noise(train, d.noise_fraction, d.noise_mode,
                                     seed=d.noise_seed + data_seed_offset, sigma=d.noise_sigma)
            except DatasetError as exc:
                raise ConfigError(str(exc)) from None
        return train, val, test


def _convert(key, raw, typ):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in _BOOL:
                raise ValueError
            return _BOOL[low]
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        name = getattr(typ, "__name__", typ)
        raise ConfigError(f"{key}: cannot parse {raw!r} as {name}") from None


def parse_config_text(text, base_dir="."):
    train_kw, data_kw = {}, {}
    train_types = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _TRAIN_KEYS:
            attr = _TRAIN_KEYS[key]
            train_kw[attr] = _convert(key, raw, train_types[attr])
        elif key in _DATA_TYPES:
            typ = _DATA_TYPES[key]
            data_kw[key] = raw if typ in (str, "str") else _convert(key, raw, typ)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    data = DataSpec(**data_kw)
    if data.output_dir is None:
        raise ConfigError("missing required key: output_dir")
    if any(getattr(data, k) is not None for k in PATH_KEYS):
        for k in PATH_KEYS:
            if getattr(data, k) is None:
                raise ConfigError(f"missing required key: {k}")
    else:
        for k in GEN_KEYS:
            if getattr(data, k) is None:
                raise ConfigError(f"missing required key: {k} (or give train_path/val_path/test_path)")
    if not 0.0 <= data.noise_fraction <= 1.0:
        raise ConfigError("noise_fraction must lie in [0, 1]")
    train = TrainConfig(**train_kw).validate()
    return RunConfig(train, data, base_dir)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, base_dir=os.path.dirname(os.path.abspath(path)))

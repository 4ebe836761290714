"""Command-line configuration.

Values are resolved per key: command-line flag, then environment
variable, then config file, then built-in default. Everything is
validated once, up front, before any command runs.

The config file is INI-style (``configparser``)::

    # comments start with # or ;
    [store]
    uri = dir:dlfs-data/objects

    [metastore]
    endpoint = file:dlfs-data/meta.json

    [vfl]
    block_size = 4194304
    readahead = 1
    cache_bytes = 268435456

    [tile]
    tile_px = 4096
    border_px = 0
    resolution_m = 10.0

    [analytics]
    cloud_threshold = 0.3
    edge_threshold = otsu
    eps = 0.01
    seed = 0

    [ingest]
    bucket = tiles

    [queue]
    name = default
    lease_s = 60

Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import os
from collections.abc import Mapping
from dataclasses import dataclass, field

from .analytics import CompositeParams, SegmentParams
from .tiling import TileSpec
from .vfl import VflConfig


class ConfigError(ValueError):
    pass


def _edge_threshold(v: str) -> float | None:
    return None if v.strip().lower() in ("otsu", "auto", "") else float(v)


# (section, key) -> (env var or None, parser, default)
SCHEMA: dict[tuple[str, str], tuple[str | None, object, object]] = {
    ("store", "uri"): ("DLFS_STORE", str, "dir:dlfs-data/objects"),
    ("metastore", "endpoint"): ("DLFS_METASTORE", str, "file:dlfs-data/meta.json"),
    ("vfl", "block_size"): ("DLFS_BLOCK_SIZE", int, VflConfig.block_size),
    ("vfl", "readahead"): ("DLFS_READAHEAD", int, VflConfig.readahead_blocks),
    ("vfl", "cache_bytes"): ("DLFS_CACHE_BYTES", int, VflConfig.cache_capacity),
    ("tile", "tile_px"): (None, int, TileSpec.tile_px),
    ("tile", "border_px"): (None, int, TileSpec.border_px),
    ("tile", "resolution_m"): (None, float, TileSpec.resolution_m),
    ("analytics", "cloud_threshold"): (None, float, SegmentParams.cloud_threshold),
    ("analytics", "edge_threshold"): (None, _edge_threshold, None),
    ("analytics", "eps"): (None, float, CompositeParams.eps),
    ("analytics", "seed"): (None, int, 0),
    ("ingest", "bucket"): (None, str, "tiles"),
    ("queue", "name"): (None, str, "default"),
    ("queue", "lease_s"): (None, float, 60.0),
}


@dataclass(frozen=True)
class Config:
    store: str
    metastore: str
    vfl: VflConfig
    tile: TileSpec
    segment: SegmentParams
    composite: CompositeParams
    seed: int = 0
    bucket: str = "tiles"
    queue: str = "default"
    lease_s: float = 60.0
    sources: dict[str, str] = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "store": self.store, "metastore": self.metastore,
            "vfl": {"block_size": self.vfl.block_size, "readahead": self.vfl.readahead_blocks,
                    "cache_bytes": self.vfl.cache_capacity},
            "tile": {"tile_px": self.tile.tile_px, "border_px": self.tile.border_px,
                     "resolution_m": self.tile.resolution_m},
            "analytics": {"cloud_threshold": self.segment.cloud_threshold,
                          "edge_threshold": self.segment.edge_threshold,
                          "eps": self.composite.eps, "seed": self.seed},
            "ingest": {"bucket": self.bucket},
            "queue": {"name": self.queue, "lease_s": self.lease_s},
        }


def read_config_file(path: str | os.PathLike) -> dict[tuple[str, str], str]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"bad config file {path}: {e}") from None
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            if (section, key) not in SCHEMA:
                raise ConfigError(f"unknown config key [{section}] {key}")
            out[(section, key)] = value
    return out


def load_config(
    flags: Mapping[tuple[str, str], object] | None = None,
    env: Mapping[str, str] | None = None,
    path: str | os.PathLike | None = None,
) -> Config:
    """Resolve every key. ``flags`` holds already-typed values; ``None`` means unset.

    The config file comes from ``path`` or ``$DLFS_CONFIG``.
    """
    env = os.environ if env is None else env
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    for k in flags:
        if k not in SCHEMA:
            raise ConfigError(f"unknown setting {k}")
    path = path or env.get("DLFS_CONFIG") or None
    from_file = read_config_file(path) if path else {}

    values: dict[tuple[str, str], object] = {}
    sources: dict[str, str] = {}
    for k, (var, parse, default) in SCHEMA.items():
        name = f"{k[0]}.{k[1]}"
        if k in flags:
            values[k], sources[name] = flags[k], "flag"
            continue
        if var and env.get(var):
            raw, src = env[var], f"env {var}"
        elif k in from_file:
            raw, src = from_file[k], "file"
        else:
            values[k], sources[name] = default, "default"
            continue
        try:
            values[k] = parse(raw)  # type: ignore[operator]
        except ValueError:
            raise ConfigError(f"{name}: cannot parse {raw!r} (from {src})") from None
        sources[name] = src

    try:
        vfl = VflConfig(values["vfl", "block_size"], values["vfl", "readahead"], values["vfl", "cache_bytes"])
        tile = TileSpec(values["tile", "tile_px"], values["tile", "border_px"], values["tile", "resolution_m"])
        ct = values["analytics", "cloud_threshold"]
        seg = SegmentParams(cloud_threshold=ct, edge_threshold=values["analytics", "edge_threshold"])
        comp = CompositeParams(cloud_threshold=ct, eps=values["analytics", "eps"])
        if values["analytics", "eps"] <= 0:
            raise ValueError("analytics.eps must be positive")
        et = values["analytics", "edge_threshold"]
        if et is not None and not et > 0:
            raise ValueError("analytics.edge_threshold must be positive or 'otsu'")
        if values["queue", "lease_s"] <= 0:
            raise ValueError("queue.lease_s must be positive")
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    return Config(
        store=values["store", "uri"],
        metastore=values["metastore", "endpoint"],
        vfl=vfl, tile=tile, segment=seg, composite=comp,
        seed=values["analytics", "seed"],
        bucket=values["ingest", "bucket"],
        queue=values["queue", "name"],
        lease_s=values["queue", "lease_s"],
        sources=sources,
    )

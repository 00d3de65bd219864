"""JSON run configuration: search settings plus paths and output switches."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .search import SearchConfig

PRECISIONS = ("f32", "f64")


@dataclass
class Config:
    search: SearchConfig = field(default_factory=SearchConfig)
    out: str = "design_out"
    dump_metadata: bool = False
    emit_kernel: str = None
    emit_format: str = None

    @property
    def precision(self):
        return self.search.precision

    @property
    def workers(self):
        return self.search.workers


_SEARCH_FIELDS = {f.name for f in dataclasses.fields(SearchConfig)}
_TOP_FIELDS = {f.name for f in dataclasses.fields(Config)} - {"search"}


def config_from_dict(d: dict) -> Config:
    """Flat dict of search and top-level keys; unknown keys raise ``ValueError``."""
    unknown = set(d) - _SEARCH_FIELDS - _TOP_FIELDS
    if unknown:
        raise ValueError(f"unknown config key(s): {sorted(unknown)}")
    search_kw = {k: v for k, v in d.items() if k in _SEARCH_FIELDS}
    if "sa" in search_kw and isinstance(search_kw["sa"], dict):
        extra = set(search_kw["sa"]) - {"t0", "alpha", "min_accept"}
        if extra:
            raise ValueError(f"unknown sa key(s): {sorted(extra)}")
    if search_kw.get("precision", "f64") not in PRECISIONS:
        raise ValueError(f"precision must be one of {PRECISIONS}")
    top = {k: v for k, v in d.items() if k in _TOP_FIELDS}
    return Config(SearchConfig(**search_kw), **top)


def load_config(path) -> Config:
    return config_from_dict(json.loads(Path(path).read_text()))


def with_overrides(cfg: Config, **kw) -> Config:
    """Apply non-``None`` overrides to a copy of ``cfg``."""
    search_kw = {k: v for k, v in kw.items() if k in _SEARCH_FIELDS and v is not None}
    top_kw = {k: v for k, v in kw.items() if k in _TOP_FIELDS and v is not None}
    unknown = set(kw) - _SEARCH_FIELDS - _TOP_FIELDS
    if unknown:
        raise ValueError(f"unknown override(s): {sorted(unknown)}")
    if search_kw.get("precision", cfg.search.precision) not in PRECISIONS:
        raise ValueError(f"precision must be one of {PRECISIONS}")
    return dataclasses.replace(cfg, search=dataclasses.replace(cfg.search, **search_kw), **top_kw)

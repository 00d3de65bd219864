"""Project a metadata set onto the exact array set a kernel plan reads."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .designer import MetadataSet
from .errors import MissingKey, UnknownFragment
from .kernelgen import FRAGMENT_OPS, KernelPlan

INT32_MAX = 2 ** 31 - 1
# arrays holding 0/1 flags are stored as bytes
FLAG_KEYS = frozenset({"row_bitmap", "warp_red_bitmap", "pad_flags"})


@dataclass
class FormatBundle:
    """Named little-endian arrays plus the node that produced each one."""

    arrays: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def total_bytes(self) -> int:
        return int(sum(a.nbytes for a in self.arrays.values()))

    def __contains__(self, name):
        return name in self.arrays

    def __getitem__(self, name):
        return self.arrays[name]

    def without(self, name) -> "FormatBundle":
        arrays = {k: v for k, v in self.arrays.items() if k != name}
        return FormatBundle(arrays, {k: v for k, v in self.provenance.items() if k != name})

    def manifest(self):
        return [{"name": k, "dtype": a.dtype.str, "length": int(a.shape[0]),
                 "provenance": self.provenance.get(k)} for k, a in self.arrays.items()]

    def save(self, directory, fuse=False):
        """One raw ``<name>.bin`` per array plus ``manifest.json``.

        With ``fuse=True`` all sub-8-byte integer arrays share ``fused.bin``;
        their manifest entries carry a byte offset into it.
        """
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries, fused, pos = [], [], 0
        for entry in self.manifest():
            a = self.arrays[entry["name"]]
            raw = a.astype(a.dtype.newbyteorder("<")).tobytes()
            if fuse and a.dtype.kind in "iu" and a.dtype.itemsize < 8:
                entry["file"], entry["offset"] = "fused.bin", pos
                fused.append(raw)
                pos += len(raw)
            else:
                entry["file"], entry["offset"] = f"{entry['name']}.bin", 0
                (d / entry["file"]).write_bytes(raw)
            entries.append(entry)
        if fused:
            (d / "fused.bin").write_bytes(b"".join(fused))
        (d / "manifest.json").write_text(json.dumps({"arrays": entries}, indent=2) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        arrays, prov, blobs = {}, {}, {}
        for e in manifest["arrays"]:
            if e["file"] not in blobs:
                blobs[e["file"]] = (d / e["file"]).read_bytes()
            dt = np.dtype(e["dtype"]).newbyteorder("<")
            a = np.frombuffer(blobs[e["file"]], dt, e["length"], e["offset"])
            arrays[e["name"]] = a.astype(a.dtype.newbyteorder("="))
            prov[e["name"]] = e["provenance"]
        return cls(arrays, prov)


def required_keys(plan: KernelPlan, include_modeled=False):
    """Qualified names of every array read by some fragment, in first-use order.

    Arrays replaced by a closed-form model are omitted unless
    ``include_modeled`` is set.
    """
    out = []
    for kern in plan.kernels:
        for frag in kern.fragments():
            if frag.op not in FRAGMENT_OPS:
                raise UnknownFragment(f"unknown fragment {frag.op!r}")
            for r in frag.reads:
                name = kern.key(r)
                if name in plan.models and not include_modeled:
                    continue
                if name not in out:
                    out.append(name)
    return out


def _split(name):
    if name.startswith("p") and "." in name:
        head, key = name.split(".", 1)
        if head[1:].isdigit():
            return int(head[1:]), key
    return None, name


def narrow(a, key=""):
    """Narrowest lossless storage type for a metadata array."""
    a = np.asarray(a)
    if a.dtype.kind == "f":
        return a
    if key in FLAG_KEYS:
        return a.astype(np.uint8)
    if a.size == 0 or (a.min() >= -INT32_MAX - 1 and a.max() <= INT32_MAX):
        return a.astype(np.int32)
    return a.astype(np.int64)


def build_format(ms: MetadataSet, keys, precision="f64") -> FormatBundle:
    """Copy ``keys`` out of ``ms`` with narrowed integer widths."""
    arrays, prov = {}, {}
    single = len(ms) == 1
    for name in keys:
        nsid, key = _split(name)
        if nsid is None:
            if not single:
                raise MissingKey(f"{name} is ambiguous across {len(ms)} namespaces")
            ns = next(iter(ms))
        else:
            if nsid not in ms.namespaces:
                raise MissingKey(name)
            ns = ms[nsid]
        if key not in ns:
            raise MissingKey(name)
        a = np.asarray(ns[key])
        if key == "values":
            a = a.astype(np.float32 if precision == "f32" else np.float64)
        else:
            a = narrow(a, key)
        arrays[name] = np.array(a, copy=True)
        prov[name] = ns.provenance.get(key)
    return FormatBundle(arrays, prov)

"""Dataset directories: JSON headers plus one flat binary file per attribute.

Layout of a dataset directory::

    header.json        format version, timestep count, attribute table
    <attr>.dat         n_timesteps * timestep_bytes, little-endian, no framing
    tid/<attr>.dat     time-independent payloads (described in header.json)
    types.json         optional type header
    dd.json            optional domain-decomposition metadata

Every byte offset follows from the header, so writers can fill disjoint
regions independently. Attribute files are pre-sized when the dataset is
created.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AlreadyPresentError, DatasetError, PayloadUnderrunError, QuantizationRangeError,
                     RegionConflictError, SchemaViolationError)

FORMAT = "myosim-dataset"
VERSION = 1
HEADER = "header.json"
TYPES = "types.json"
DD = "dd.json"
TID_DIR = "tid"


class RawF64:
    id = "raw_f64"
    dtype = np.dtype("<f8")

    def encode(self, values) -> np.ndarray:
        return np.asarray(values, dtype=self.dtype)

    def decode(self, raw: np.ndarray) -> np.ndarray:
        return raw.astype(np.float64)

    def to_dict(self) -> dict:
        return {"id": self.id}

    def __eq__(self, other):
        return isinstance(other, RawF64)


class Quantized:
    """Fixed-rate linear quantizer: ``level = floor((v - min) / (max - min) * (2^bits - 1) + 0.5)``."""

    id = "quantized"

    def __init__(self, bits: int, vmin: float, vmax: float):
        if not 1 <= bits <= 32:
            raise ValueError("bits must lie in [1, 32]")
        if not vmin < vmax:
            raise ValueError("quantizer needs min < max")
        self.bits = int(bits)
        self.vmin = float(vmin)
        self.vmax = float(vmax)
        self.levels = (1 << self.bits) - 1
        self.dtype = np.dtype("<u1" if bits <= 8 else "<u2" if bits <= 16 else "<u4")

    @property
    def step(self) -> float:
        return (self.vmax - self.vmin) / self.levels

    def encode(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(v)) or np.any(v < self.vmin) or np.any(v > self.vmax):
            raise QuantizationRangeError()
        lv = np.floor((v - self.vmin) / (self.vmax - self.vmin) * self.levels + 0.5)
        return np.minimum(lv, self.levels).astype(self.dtype)

    def decode(self, raw: np.ndarray) -> np.ndarray:
        return self.vmin + raw.astype(np.float64) * self.step

    def to_dict(self) -> dict:
        return {"id": self.id, "bits": self.bits, "min": self.vmin, "max": self.vmax}

    def __eq__(self, other):
        return isinstance(other, Quantized) and other.to_dict() == self.to_dict()


def codec_from_dict(d) -> RawF64 | Quantized:
    if d.get("id") == RawF64.id:
        return RawF64()
    if d.get("id") == Quantized.id:
        return Quantized(d["bits"], d["min"], d["max"])
    raise SchemaViolationError(f"schema violation: unknown codec {d!r}")


def codec_from_name(name: str, vmin=-100.0, vmax=60.0):
    """CLI shorthand: ``raw``, ``q8`` or ``q16``."""
    if name == "raw":
        return RawF64()
    if name in ("q8", "q16"):
        return Quantized(int(name[1:]), vmin, vmax)
    raise ValueError(f"unknown codec {name!r}")


@dataclass
class AttributeSpec:
    name: str
    count: int
    codec: RawF64 | Quantized = field(default_factory=RawF64)
    semantic: str = "scalar"

    @property
    def timestep_bytes(self) -> int:
        return self.count * self.codec.dtype.itemsize

    def to_dict(self) -> dict:
        return {"name": self.name, "semantic": self.semantic, "count": self.count,
                "codec": self.codec.to_dict(), "timestep_bytes": self.timestep_bytes}

    @classmethod
    def from_dict(cls, d) -> "AttributeSpec":
        try:
            attr = cls(d["name"], int(d["count"]), codec_from_dict(d["codec"]), d.get("semantic", "scalar"))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolationError(f"schema violation: bad attribute entry {d!r}") from exc
        if d.get("timestep_bytes") != attr.timestep_bytes:
            raise SchemaViolationError("schema violation: timestep_bytes inconsistent with codec and count")
        return attr


@dataclass
class DatasetHeader:
    attributes: list
    n_timesteps: int
    dt: float
    tid: list = field(default_factory=list)
    types: str | None = None
    dd: str | None = None
    version: int = VERSION

    def attribute(self, name) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaViolationError(f"schema violation: no attribute {name!r}")

    def tid_entry(self, name) -> AttributeSpec:
        for a in self.tid:
            if a.name == name:
                return a
        raise SchemaViolationError(f"schema violation: no time-independent data {name!r}")

    def to_dict(self) -> dict:
        return {"format": FORMAT, "version": self.version, "n_timesteps": self.n_timesteps, "dt": self.dt,
                "attributes": [a.to_dict() for a in self.attributes],
                "tid": [a.to_dict() for a in self.tid], "types": self.types, "dd": self.dd}

    @classmethod
    def from_dict(cls, d) -> "DatasetHeader":
        if not isinstance(d, dict) or d.get("format") != FORMAT:
            raise SchemaViolationError("schema violation: not a dataset header")
        if d.get("version") != VERSION:
            raise SchemaViolationError(f"schema violation: unsupported version {d.get('version')!r}")
        try:
            h = cls([AttributeSpec.from_dict(a) for a in d["attributes"]], int(d["n_timesteps"]), float(d["dt"]),
                    [AttributeSpec.from_dict(a) for a in d.get("tid") or []], d.get("types"), d.get("dd"))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolationError("schema violation: incomplete header") from exc
        names = [a.name for a in h.attributes]
        if len(set(names)) != len(names):
            raise SchemaViolationError("schema violation: duplicate attribute names")
        return h


class _ClaimRegistry:
    """Process-wide record of claimed byte ranges, keyed by data file."""

    def __init__(self):
        self._lock = threading.Lock()
        self._claims = {}

    def claim(self, key, start, stop):
        with self._lock:
            spans = self._claims.setdefault(key, [])
            for a, b in spans:
                if start < b and a < stop:
                    raise RegionConflictError()
            spans.append((start, stop))

    def release(self, prefix):
        with self._lock:
            for k in [k for k in self._claims if k[0] == prefix]:
                del self._claims[k]


CLAIMS = _ClaimRegistry()


@dataclass
class DdMetadata:
    """Which worker held which elements and fiber segments, plus per-timestep loads."""

    layout: dict
    workers: list
    loads: list = field(default_factory=list)
    seed: int | None = None

    def fiber_owners(self, fiber: int) -> list:
        """Ranks that simulated part of ``fiber`` (several if the fiber was cut)."""
        return sorted(w["rank"] for w in self.workers if fiber in set(w.get("fibers", ())))

    def element_owner(self, element: int) -> int:
        for w in self.workers:
            if element in set(w.get("elements", ())):
                return w["rank"]
        raise KeyError(element)

    def to_dict(self) -> dict:
        return {"layout": self.layout, "workers": self.workers, "loads": self.loads, "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "DdMetadata":
        try:
            return cls(d["layout"], d["workers"], d.get("loads", []), d.get("seed"))
        except (KeyError, TypeError) as exc:
            raise SchemaViolationError("schema violation: bad DD metadata") from exc


def _write_json(path: Path, payload, exclusive=False):
    mode = "x" if exclusive else "w"
    try:
        with open(path, mode, encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except FileExistsError as exc:
        raise AlreadyPresentError() from exc


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise SchemaViolationError(f"schema violation: missing {path.name}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolationError(f"schema violation: {path.name} is not valid JSON") from exc


def _remove_dataset_files(path: Path):
    """Delete the files an existing header owns; other files in the directory are left alone."""
    try:
        old = DatasetHeader.from_dict(_read_json(path / HEADER))
        names = [f"{a.name}.dat" for a in old.attributes] + [f"{TID_DIR}/{a.name}.dat" for a in old.tid]
    except DatasetError:
        names = []
    for name in names + [TYPES, DD, HEADER]:
        (path / name).unlink(missing_ok=True)
    tid = path / TID_DIR
    if tid.is_dir() and not any(tid.iterdir()):
        tid.rmdir()


class Dataset:
    """Handle on a dataset directory."""

    def __init__(self, path, header: DatasetHeader):
        self.path = Path(path)
        self.header = header
        self._key = str(self.path.resolve())
        self._lock = threading.Lock()

    @classmethod
    def create(cls, path, attributes, n_timesteps: int, dt: float, overwrite=False) -> "Dataset":
        path = Path(path)
        if (path / HEADER).exists():
            if not overwrite:
                raise AlreadyPresentError()
            _remove_dataset_files(path)
        path.mkdir(parents=True, exist_ok=True)
        header = DatasetHeader(list(attributes), int(n_timesteps), float(dt))
        header = DatasetHeader.from_dict(header.to_dict())
        for a in header.attributes:
            with open(path / f"{a.name}.dat", "wb") as fh:
                fh.truncate(a.timestep_bytes * header.n_timesteps)
        _write_json(path / HEADER, header.to_dict())
        CLAIMS.release(str(path.resolve()))
        return cls(path, header)

    @classmethod
    def open(cls, path) -> "Dataset":
        path = Path(path)
        return cls(path, DatasetHeader.from_dict(_read_json(path / HEADER)))

    def close(self):
        """Forget region claims so the dataset can be rewritten."""
        CLAIMS.release(self._key)

    def _save_header(self):
        _write_json(self.path / HEADER, self.header.to_dict())

    # time series -----------------------------------------------------------
    def write_timestep(self, t: int, name: str, values, region=None) -> tuple:
        """Encode ``values`` into ``region = (start, stop)`` of timestep ``t``; returns the byte range."""
        attr = self.header.attribute(name)
        if not 0 <= t < self.header.n_timesteps:
            raise SchemaViolationError(f"schema violation: timestep {t} out of range")
        values = np.asarray(values).ravel()
        start, stop = region if region is not None else (0, attr.count)
        if not 0 <= start <= stop <= attr.count or stop - start != values.size:
            raise SchemaViolationError("schema violation: region outside the attribute extent")
        data = attr.codec.encode(values)
        item = attr.codec.dtype.itemsize
        offset = t * attr.timestep_bytes + start * item
        end = offset + data.nbytes
        CLAIMS.claim((self._key, name, t), start, stop)
        fd = os.open(self.path / f"{name}.dat", os.O_WRONLY)
        try:
            os.pwrite(fd, data.tobytes(), offset)
        finally:
            os.close(fd)
        return offset, end

    def read_timestep(self, t: int, name: str) -> np.ndarray:
        attr = self.header.attribute(name)
        if not 0 <= t < self.header.n_timesteps:
            raise SchemaViolationError(f"schema violation: timestep {t} out of range")
        return self._read(self.path / f"{name}.dat", attr, t * attr.timestep_bytes)

    def read_series(self, name: str) -> np.ndarray:
        return np.stack([self.read_timestep(t, name) for t in range(self.header.n_timesteps)])

    def _read(self, file: Path, attr: AttributeSpec, offset: int) -> np.ndarray:
        try:
            size = file.stat().st_size
        except FileNotFoundError as exc:
            raise PayloadUnderrunError() from exc
        if size < offset + attr.timestep_bytes:
            raise PayloadUnderrunError()
        with open(file, "rb") as fh:
            fh.seek(offset)
            raw = np.frombuffer(fh.read(attr.timestep_bytes), dtype=attr.codec.dtype)
        return attr.codec.decode(raw)

    # sidecars --------------------------------------------------------------
    def write_tid(self, name: str, values, codec=None, semantic="scalar"):
        values = np.asarray(values).ravel()
        with self._lock:
            if any(a.name == name for a in self.header.tid):
                raise AlreadyPresentError()
            attr = AttributeSpec(name, values.size, codec or RawF64(), semantic)
            (self.path / TID_DIR).mkdir(exist_ok=True)
            target = self.path / TID_DIR / f"{name}.dat"
            try:
                with open(target, "xb") as fh:
                    fh.write(attr.codec.encode(values).tobytes())
            except FileExistsError as exc:
                raise AlreadyPresentError() from exc
            self.header.tid.append(attr)
            self._save_header()

    def read_tid(self, name: str) -> np.ndarray:
        attr = self.header.tid_entry(name)
        return self._read(self.path / TID_DIR / f"{name}.dat", attr, 0)

    def write_type_header(self, payload: dict):
        with self._lock:
            if self.header.types is not None:
                raise AlreadyPresentError()
            _write_json(self.path / TYPES, payload, exclusive=True)
            self.header.types = TYPES
            self._save_header()

    def read_type_header(self) -> dict | None:
        return None if self.header.types is None else _read_json(self.path / self.header.types)

    def write_dd(self, dd: DdMetadata | dict):
        payload = dd.to_dict() if isinstance(dd, DdMetadata) else dict(dd)
        DdMetadata.from_dict(payload)
        with self._lock:
            if self.header.dd is not None:
                raise AlreadyPresentError()
            _write_json(self.path / DD, payload, exclusive=True)
            self.header.dd = DD
            self._save_header()

    def read_dd(self) -> DdMetadata | None:
        return None if self.header.dd is None else DdMetadata.from_dict(_read_json(self.path / self.header.dd))

    # validation ------------------------------------------------------------
    def validate(self) -> dict:
        """Check every file against the header; raise on the first inconsistency.

        Returns a summary suitable for printing.
        """
        h = self.header
        for a in h.attributes:
            f = self.path / f"{a.name}.dat"
            want = a.timestep_bytes * h.n_timesteps
            size = f.stat().st_size if f.exists() else -1
            if size < want:
                raise PayloadUnderrunError(f"payload underrun: {f.name} has {max(size, 0)} of {want} bytes")
            if size > want:
                raise SchemaViolationError(f"schema violation: {f.name} is larger than the header allows")
        for a in h.tid:
            f = self.path / TID_DIR / f"{a.name}.dat"
            size = f.stat().st_size if f.exists() else -1
            if size != a.timestep_bytes:
                raise (PayloadUnderrunError if size < a.timestep_bytes else SchemaViolationError)()
            self.read_tid(a.name)
        self.read_type_header()
        dd = self.read_dd()
        if dd is not None:
            n = int(np.prod(dd.layout.get("p", [1])))
            ranks = sorted(w.get("rank") for w in dd.workers)
            if ranks != list(range(n)):
                raise SchemaViolationError("schema violation: DD workers do not cover the layout")
        return {"path": str(self.path), "n_timesteps": h.n_timesteps, "dt": h.dt,
                "attributes": {a.name: {"count": a.count, "codec": a.codec.to_dict()} for a in h.attributes},
                "tid": [a.name for a in h.tid], "types": h.types is not None, "dd": h.dd is not None}


def write_table(path, columns: dict, dt: float = 1.0) -> Dataset:
    """Store a study table (equal-length numeric columns) as a one-timestep dataset."""
    attrs = [AttributeSpec(k, len(np.ravel(v))) for k, v in columns.items()]
    ds = Dataset.create(path, attrs, 1, dt, overwrite=True)
    for k, v in columns.items():
        ds.write_timestep(0, k, np.asarray(v, dtype=float))
    ds.close()
    return ds


__all__ = ["RawF64", "Quantized", "AttributeSpec", "DatasetHeader", "DdMetadata", "Dataset",
           "codec_from_dict", "codec_from_name", "write_table", "DatasetError"]

import contextlib
import json
import math
import numpy as np
import os
import pathlib
import struct
import threading
from collections.abc import Iterator
from typing import BinaryIO, Literal, Optional, Self
from .errors import EmptyPoolError, FormatError, SchemaError
from .params import ParamSet, Schema, describe_mismatch


MAGIC = b"FWCK"
VERSION = 1
EXTENSION = "fwck"
_PREAMBLE = struct.Struct("<4sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


#
# FWCK file format
#
def save_checkpoint(p: ParamSet, path: str | os.PathLike, dtype: Literal["f32", "f64"] = "f64") -> None:
    """
    Writes a parameter set as an FWCK file.

    Layout: magic ``FWCK``, version (u32 LE), header length (u64 LE), UTF-8 JSON header
    listing ``{name, dtype, shape, offset, nbytes}`` per layer, then the raw
    little-endian payloads in header order. Offsets are relative to the payload start.

    Args:
        p (ParamSet): The parameters.
        path (str): The destination file.
        dtype (str): The storage precision: 'f64' (default) or 'f32'.
    """
    if dtype not in _DTYPES:
        raise FormatError(f"Unsupported storage dtype '{dtype}'")
    payloads = []
    header = []
    offset = 0
    for name, array in p.layers.items():
        data = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
        header.append({
            "name": name,
            "dtype": dtype,
            "shape": list(array.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        payloads.append(data)
        offset += len(data)
    header_bytes = json.dumps(header, separators=(',', ':')).encode("utf-8")
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)))
        f.write(header_bytes)
        for data in payloads:
            f.write(data)


def _read_header(f: BinaryIO, path) -> list[dict]:
    preamble = f.read(_PREAMBLE.size)
    if len(preamble) < _PREAMBLE.size:
        raise FormatError(f"{path}: file too short for an FWCK preamble")
    magic, version, header_length = _PREAMBLE.unpack(preamble)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported FWCK version {version}")
    if header_length > os.fstat(f.fileno()).st_size - _PREAMBLE.size:
        raise FormatError(f"{path}: header length {header_length} exceeds file size")
    header_bytes = f.read(header_length)
    if len(header_bytes) != header_length:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise FormatError(f"{path}: header is not valid JSON ({error})") from None
    if not isinstance(header, list):
        raise FormatError(f"{path}: header must be a list of layer entries")
    names = set()
    for entry in header:
        if not isinstance(entry, dict) or not {"name", "dtype", "shape", "offset", "nbytes"} <= entry.keys():
            raise FormatError(f"{path}: malformed header entry {entry!r}")
        if entry["dtype"] not in _DTYPES:
            raise FormatError(f"{path}: unsupported dtype {entry['dtype']!r} in layer '{entry['name']}'")
        shape = entry["shape"]
        if not isinstance(shape, list) or not all(isinstance(d, int) and d > 0 for d in shape):
            raise FormatError(f"{path}: invalid shape {shape!r} in layer '{entry['name']}'")
        expected = math.prod(shape) * _DTYPES[entry["dtype"]].itemsize
        if entry["nbytes"] != expected:
            raise FormatError(
                f"{path}: layer '{entry['name']}' declares {entry['nbytes']} bytes "
                f"but its shape needs {expected}"
            )
        if entry["name"] in names:
            raise FormatError(f"{path}: duplicated layer '{entry['name']}'")
        names.add(entry["name"])
    return header


def read_schema(path: str | os.PathLike) -> Schema:
    """ Returns the layer names and shapes of an FWCK file, reading only its header. """
    try:
        with open(path, "rb") as f:
            header = _read_header(f, path)
    except OSError as error:
        raise FormatError(f"{path}: cannot read checkpoint ({error})") from None
    return tuple((entry["name"], tuple(entry["shape"])) for entry in header)


def load_checkpoint(path: str | os.PathLike) -> ParamSet:
    """
    Reads an FWCK file. 32-bit payloads are promoted to 64-bit floats.

    Raises:
        FormatError: On bad magic/version, malformed header, truncated data, or trailing bytes.
    """
    try:
        with open(path, "rb") as f:
            header = _read_header(f, path)
            payload = f.read()
    except OSError as error:
        raise FormatError(f"{path}: cannot read checkpoint ({error})") from None
    layers = {}
    end = 0
    for entry in header:
        start = entry["offset"]
        stop = start + entry["nbytes"]
        if start != end:
            raise FormatError(f"{path}: layer '{entry['name']}' does not start where the previous one ends")
        if stop > len(payload):
            raise FormatError(
                f"{path}: truncated data in layer '{entry['name']}' "
                f"({len(payload) - start} of {entry['nbytes']} bytes present)"
            )
        data = np.frombuffer(payload[start:stop], dtype=_DTYPES[entry["dtype"]])
        layers[entry["name"]] = data.astype(np.float64).reshape(entry["shape"])
        end = stop
    if end != len(payload):
        raise FormatError(f"{path}: {len(payload) - end} trailing bytes after the last layer")
    return ParamSet(layers)


#
# Checkpoint pool
#
class ResidencyMeter:
    """
    Counts the pool-derived parameter sets held in memory at once.
    """

    def __init__(self):
        self.loads = 0
        self.current = 0
        self.peak = 0
        self._lock = threading.Lock()

    def acquire(self, count: int = 1, load: bool = False) -> None:
        with self._lock:
            self.current += count
            self.peak = max(self.peak, self.current)
            if load:
                self.loads += count

    def release(self, count: int = 1) -> None:
        with self._lock:
            self.current -= count

    @contextlib.contextmanager
    def holding(self, count: int = 1) -> Iterator[None]:
        """ Accounts for derived parameter sets (task vectors, composites) while the block runs. """
        self.acquire(count)
        try:
            yield
        finally:
            self.release(count)

    def reset(self) -> None:
        with self._lock:
            self.loads = 0
            self.current = 0
            self.peak = 0

    def __repr__(self) -> str:
        return f"{{loads: {self.loads}, current: {self.current}, peak: {self.peak}}}"


class CheckpointPool:
    """
    Ordered collection of checkpoints, loaded lazily one at a time.

    Entries are either FWCK file paths or in-memory parameter sets.
    """

    def __init__(self, entries: Optional[list[tuple[str, str | os.PathLike | ParamSet]]] = None):
        self._ids: list[str] = []
        self._sources: list[pathlib.Path | ParamSet] = []
        self._locks: list[threading.Lock] = []
        self._hashes: dict[int, str] = {}
        self._schema: Optional[Schema] = None
        self.meter = ResidencyMeter()
        for entry_id, source in entries or []:
            self.add(entry_id, source)

    @classmethod
    def from_directory(cls, folder: str | os.PathLike) -> Self:
        """
        Pool of the ``*.fwck`` files of a folder, sorted by name; ids are file stems.

        Raises:
            FormatError: If the folder does not exist.
            EmptyPoolError: If it holds no checkpoint.
        """
        folder = pathlib.Path(folder)
        if not folder.is_dir():
            raise FormatError(f"Pool folder '{folder}' does not exist")
        files = sorted(folder.glob(f"*.{EXTENSION}"))
        if len(files) == 0:
            raise EmptyPoolError(f"Pool folder '{folder}' contains no .{EXTENSION} file")
        return cls([(file.stem, file) for file in files])

    @classmethod
    def from_params(cls, params: list[ParamSet], ids: Optional[list[str]] = None) -> Self:
        ids = ids if ids is not None else [f"m{i}" for i in range(len(params))]
        return cls(list(zip(ids, params)))

    def add(self, entry_id: str, source: str | os.PathLike | ParamSet) -> None:
        if entry_id in self._ids:
            raise SchemaError(f"Duplicated checkpoint id '{entry_id}'")
        self._ids.append(entry_id)
        self._sources.append(source if isinstance(source, ParamSet) else pathlib.Path(source))
        self._locks.append(threading.Lock())
        self._schema = None

    def extended(self, entry_id: str, source: str | os.PathLike | ParamSet) -> "CheckpointPool":
        """ A new pool with one more entry, sharing this pool's residency meter. """
        pool = CheckpointPool(list(zip(self._ids, self._sources)))
        pool.meter = self.meter
        pool._hashes = dict(self._hashes)
        pool.add(entry_id, source)
        return pool

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def __len__(self) -> int:
        return len(self._ids)

    def index(self, entry_id: str) -> int:
        return self._ids.index(entry_id)

    def is_in_memory(self, i: int) -> bool:
        return isinstance(self._sources[i], ParamSet)

    def entry_schema(self, i: int) -> Schema:
        source = self._sources[i]
        return source.schema if isinstance(source, ParamSet) else read_schema(source)

    @property
    def schema(self) -> Schema:
        if self._schema is None:
            check_schema(self)
        return self._schema

    def _load(self, i: int) -> ParamSet:
        source = self._sources[i]
        return source if isinstance(source, ParamSet) else load_checkpoint(source)

    @contextlib.contextmanager
    def checkout(self, i: int) -> Iterator[ParamSet]:
        """ Loads entry i and counts it as resident until the block exits. """
        with self._locks[i]:
            params = self._load(i)
        self.meter.acquire(load=True)
        try:
            yield params
        finally:
            self.meter.release()

    def stream(self) -> Iterator[tuple[int, str, ParamSet]]:
        """ Yields (index, id, params) one checkpoint at a time, in pool order. """
        for i, entry_id in enumerate(self._ids):
            with self.checkout(i) as params:
                yield i, entry_id, params

    def content_hash(self, i: int) -> str:
        if i not in self._hashes:
            with self.checkout(i) as params:
                self._hashes[i] = params.content_hash()
        return self._hashes[i]

    def find(self, params: ParamSet) -> Optional[int]:
        """ The index of an entry with the same content, or None. """
        target = params.content_hash()
        for i in range(len(self._ids)):
            if self.content_hash(i) == target:
                return i
        return None

    def _set_schema(self, schema: Schema) -> None:
        self._schema = schema

    def __repr__(self) -> str:
        return f"{{ids: {self._ids}, meter: {self.meter}}}"


def check_schema(pool: CheckpointPool) -> None:
    """
    Verifies that every entry shares the first entry's schema and caches it.

    File-backed entries are checked from their headers only.

    Raises:
        EmptyPoolError: If the pool is empty.
        SchemaError: Naming the offending id and layer.
    """
    if len(pool) == 0:
        raise EmptyPoolError("The checkpoint pool is empty")
    reference = pool.entry_schema(0)
    for i, entry_id in enumerate(pool.ids[1:], start=1):
        schema = pool.entry_schema(i)
        if schema != reference:
            raise SchemaError(
                f"Checkpoint '{entry_id}' does not match the schema of '{pool.ids[0]}': "
                f"{describe_mismatch(reference, schema)}"
            )
    pool._set_schema(reference)

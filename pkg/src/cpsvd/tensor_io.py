"""Binary tensor files, model manifests and report documents.

Tensor file layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"CPSV"
    4       1     version (1)
    5       1     dtype (0 = float32, 1 = float64)
    6       1     ndim
    7       4     padding (zero)
    11      8*nd  dims, uint64
    ...           row-major payload

Matrices are always returned as C-contiguous float64 arrays.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CPSV"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBB4x")
REPORT_VERSION = 1
BACKENDS = ("whitened_svd",)


class TensorFormatError(ValueError):
    code = "format"


class BadMagicError(TensorFormatError):
    code = "bad_magic"


class UnsupportedVersionError(TensorFormatError):
    code = "bad_version"


class DtypeError(TensorFormatError):
    code = "bad_dtype"


class ShapeError(TensorFormatError):
    code = "bad_shape"


class TruncatedPayloadError(TensorFormatError):
    code = "truncated"


class PayloadSizeError(TensorFormatError):
    code = "payload_size"


class NonFiniteError(TensorFormatError):
    code = "non_finite"


class ManifestError(ValueError):
    pass


class MissingTensorError(ManifestError):
    pass


class ManifestShapeError(ManifestError):
    pass


class RatioRangeError(ManifestError):
    pass


class DuplicateNameError(ManifestError):
    pass


def _read_header(fh, path):
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, version, dtype_code, ndim = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if dtype_code not in DTYPES:
        raise DtypeError(f"{path}: unknown dtype code {dtype_code}")
    raw_dims = fh.read(8 * ndim)
    if len(raw_dims) < 8 * ndim:
        raise TruncatedPayloadError(f"{path}: truncated dimension table")
    dims = struct.unpack(f"<{ndim}Q", raw_dims)
    return DTYPES[dtype_code], dims


def read_shape(path) -> tuple[int, ...]:
    """Return the declared dims of a tensor file without reading its payload."""
    with open(path, "rb") as fh:
        return _read_header(fh, path)[1]


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dtype, dims = _read_header(fh, path)
        payload = fh.read()
    if len(dims) != 2:
        raise ShapeError(f"{path}: expected a 2-D tensor, got ndim={len(dims)}")
    count = dims[0] * dims[1]
    expected = count * dtype.itemsize
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: declared {count} entries but payload holds "
            f"{len(payload) // dtype.itemsize}"
        )
    if len(payload) > expected:
        raise PayloadSizeError(f"{path}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: NaN or Inf entries")
    return np.ascontiguousarray(data)


def _atomic_write(path, blob: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(matrix, dtype=np.float64) -> bytes:
    a = np.asarray(matrix)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if 0 in a.shape:
        raise ShapeError(f"zero-size dimension in shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("refusing to write NaN or Inf entries")
    code = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}.get(np.dtype(dtype))
    if code is None:
        raise DtypeError(f"unsupported dtype {dtype}")
    header = _HEADER.pack(MAGIC, VERSION, code, 2) + struct.pack("<2Q", *a.shape)
    return header + np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()


def write_tensor(matrix, path, dtype=np.float64) -> None:
    _atomic_write(path, encode_tensor(matrix, dtype))


@dataclass
class ModuleSpec:
    name: str
    weight_path: Path
    m: int
    n: int
    gram_path: Path | None = None
    activation_paths: list[Path] = field(default_factory=list)

    @property
    def params(self) -> int:
        return self.m * self.n


@dataclass
class LayerSpec:
    name: str
    modules: list[ModuleSpec]
    x_in_path: Path
    x_out_path: Path


@dataclass
class ModelManifest:
    layers: list[LayerSpec]
    target_ratio: float
    temperature: float = 0.1
    backend: str = "whitened_svd"
    path: Path | None = None


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _require(doc, key, where):
    if key not in doc:
        raise ManifestError(f"{where}: missing field {key!r}")
    return doc[key]


def _check_exists(p: Path, what: str):
    if not p.is_file():
        raise MissingTensorError(f"{what}: tensor file not found: {p}")


def parse_manifest(doc: dict, base_dir=".") -> ModelManifest:
    """Validate a manifest document; relative tensor paths resolve against ``base_dir``."""
    base = Path(base_dir)
    ratio = float(_require(doc, "target_ratio", "manifest"))
    if not 0.0 <= ratio < 1.0:
        raise RatioRangeError(f"target_ratio {ratio} outside [0, 1)")
    temperature = float(doc.get("temperature", 0.1))
    if not temperature > 0:
        raise ManifestError(f"temperature must be positive, got {temperature}")
    backend = doc.get("backend", "whitened_svd")
    if backend not in BACKENDS:
        raise ManifestError(f"unknown backend {backend!r}")
    raw_layers = _require(doc, "layers", "manifest")
    if not raw_layers:
        raise ManifestError("manifest has no layers")

    layers = []
    seen_layers = set()
    for ldoc in raw_layers:
        lname = str(_require(ldoc, "name", "layer"))
        if lname in seen_layers:
            raise DuplicateNameError(f"duplicate layer name {lname!r}")
        seen_layers.add(lname)
        x_in = _resolve(base, _require(ldoc, "x_in", lname))
        x_out = _resolve(base, _require(ldoc, "x_out", lname))
        _check_exists(x_in, lname)
        _check_exists(x_out, lname)
        if read_shape(x_in) != read_shape(x_out):
            raise ManifestShapeError(
                f"{lname}: x_in {read_shape(x_in)} and x_out {read_shape(x_out)} differ"
            )
        modules = []
        seen_modules = set()
        for mdoc in _require(ldoc, "modules", lname):
            mname = str(_require(mdoc, "name", lname))
            where = f"{lname}.{mname}"
            if mname in seen_modules:
                raise DuplicateNameError(f"duplicate module name {where!r}")
            seen_modules.add(mname)
            m, n = int(_require(mdoc, "m", where)), int(_require(mdoc, "n", where))
            if m <= 0 or n <= 0:
                raise ManifestShapeError(f"{where}: dims must be positive")
            weight = _resolve(base, _require(mdoc, "weight", where))
            _check_exists(weight, where)
            if read_shape(weight) != (m, n):
                raise ManifestShapeError(
                    f"{where}: weight stored as {read_shape(weight)}, declared {(m, n)}"
                )
            gram = mdoc.get("gram")
            acts = mdoc.get("activations", [])
            if (gram is None) == (not acts):
                raise ManifestError(f"{where}: give exactly one of 'gram' or 'activations'")
            spec = ModuleSpec(mname, weight, m, n)
            if gram is not None:
                spec.gram_path = _resolve(base, gram)
                _check_exists(spec.gram_path, where)
                if read_shape(spec.gram_path) != (n, n):
                    raise ManifestShapeError(
                        f"{where}: gram stored as {read_shape(spec.gram_path)}, expected {(n, n)}"
                    )
            else:
                for a in acts:
                    ap = _resolve(base, a)
                    _check_exists(ap, where)
                    if read_shape(ap)[0] != n:
                        raise ManifestShapeError(
                            f"{where}: activation {ap} has {read_shape(ap)[0]} rows, expected {n}"
                        )
                    spec.activation_paths.append(ap)
            modules.append(spec)
        if not modules:
            raise ManifestError(f"{lname}: layer has no modules")
        layers.append(LayerSpec(lname, modules, x_in, x_out))
    return ModelManifest(layers, ratio, temperature, backend)


def load_manifest(path) -> ModelManifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    manifest = parse_manifest(doc, path.parent)
    manifest.path = path
    return manifest


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def report_to_text(report: dict) -> str:
    """Canonical text form: sorted keys, round-trip float repr, no timestamps."""
    doc = {k: v for k, v in report.items() if k != "generated_at"}
    doc.setdefault("report_version", REPORT_VERSION)
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    _atomic_write(path, report_to_text(report).encode())


def read_report(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("report_version") != REPORT_VERSION:
        raise ValueError(f"{path}: unsupported report_version {doc.get('report_version')}")
    return doc

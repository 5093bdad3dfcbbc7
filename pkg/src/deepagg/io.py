"""Binary and text file formats: DFT1 tensors, NPY input, manifests, DSC1 descriptors.

DFT1 layout: magic ``DFT1``, three little-endian u32 (K, H, W), then K*H*W
little-endian float32 payload values in (k, i, j) order with k slowest.  No
padding, no footer.

DSC1 layout: magic ``DSC1``, u32 count, u32 dim, then per record a u16 id
byte-length, the UTF-8 id, and dim little-endian float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import RAW_STAGE, DatasetManifest, FeatureTensor, GlobalDescriptor
from .errors import (
    DimensionMismatch,
    DuplicateId,
    IoFailure,
    MalformedFile,
    MissingFile,
    NonFiniteValue,
)

DFT1_MAGIC = b"DFT1"
DSC1_MAGIC = b"DSC1"
NPY_MAGIC = b"\x93NUMPY"


def save_tensor(tensor: FeatureTensor, path: str | Path) -> None:
    """Write a tensor as a DFT1 file; the result round-trips bit-exactly."""
    k, h, w = tensor.values.shape
    payload = np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(DFT1_MAGIC)
            fh.write(struct.pack("<III", k, h, w))
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write tensor to {path}: {exc}") from exc


def load_tensor(path: str | Path, image_id: str | None = None) -> FeatureTensor:
    """Read a tensor from a DFT1 or NPY file, detected by magic bytes.

    The image id defaults to the file stem.  Values are validated finite and
    returned bit-exactly as stored (NPY float64 input is narrowed to float32).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"tensor file does not exist: {path}")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if image_id is None:
        image_id = path.stem
    if data[:4] == DFT1_MAGIC:
        return _parse_dft1(data, image_id, path)
    if data[:6] == NPY_MAGIC:
        return _parse_npy(data, image_id, path)
    raise MalformedFile(f"{path}: unrecognized magic bytes {data[:6]!r}")


def _parse_dft1(data: bytes, image_id: str, path: Path) -> FeatureTensor:
    if len(data) < 16:
        raise MalformedFile(f"{path}: truncated DFT1 header")
    k, h, w = struct.unpack_from("<III", data, 4)
    if min(k, h, w) < 1:
        raise MalformedFile(f"{path}: header declares empty dimension {k}x{h}x{w}")
    expected = 16 + 4 * k * h * w
    if len(data) != expected:
        raise DimensionMismatch(
            f"{path}: header declares {k}x{h}x{w} ({expected} bytes), file has {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(k, h, w)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: tensor payload contains non-finite values")
    return FeatureTensor(values=values, image_id=image_id)


def _parse_npy(data: bytes, image_id: str, path: Path) -> FeatureTensor:
    import io as _io

    fh = _io.BytesIO(data)
    try:
        version = np.lib.format.read_magic(fh)
        if version == (1, 0):
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fh)
        elif version == (2, 0):
            shape, fortran_order, dtype = np.lib.format.read_array_header_2_0(fh)
        else:
            raise MalformedFile(f"{path}: unsupported NPY version {version}")
    except MalformedFile:
        raise
    except Exception as exc:
        raise MalformedFile(f"{path}: bad NPY header ({exc})") from exc
    if fortran_order:
        raise MalformedFile(f"{path}: fortran-order NPY arrays are not supported")
    if dtype.kind != "f":
        raise MalformedFile(f"{path}: NPY dtype must be floating, got {dtype}")
    if len(shape) != 3:
        raise MalformedFile(f"{path}: NPY array must be 3-D (K, H, W), got shape {shape}")
    if min(shape) < 1:
        raise MalformedFile(f"{path}: NPY array has an empty dimension {shape}")
    count = int(np.prod(shape))
    raw = fh.read()
    if len(raw) != count * dtype.itemsize:
        raise DimensionMismatch(
            f"{path}: NPY payload has {len(raw)} bytes, header declares "
            f"{count * dtype.itemsize}"
        )
    values = np.frombuffer(raw, dtype=dtype).reshape(shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: tensor payload contains non-finite values")
    values = values.astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: values overflow float32 range")
    return FeatureTensor(values=values, image_id=image_id)


def load_manifest(path: str | Path, role: str | None = None) -> DatasetManifest:
    """Read a tab-separated ``image_id<TAB>path`` manifest.

    ``#``-prefixed and blank lines are ignored.  Relative entry paths are
    resolved against the manifest's own directory; every referenced file must
    exist.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest does not exist: {path}")
    base = path.parent
    entries: list[tuple[str, Path]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise MalformedFile(
                f"{path}:{lineno}: expected 'image_id<TAB>path', got {line!r}"
            )
        image_id, raw_path = parts
        entry_path = Path(raw_path)
        if not entry_path.is_absolute():
            entry_path = base / entry_path
        entries.append((image_id, entry_path))
    manifest = DatasetManifest(entries=tuple(entries), role=role)
    manifest.verify_files()
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    lines = [f"{image_id}\t{entry_path}" for image_id, entry_path in manifest.entries]
    try:
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest to {path}: {exc}") from exc


def save_descriptors(descriptors: list[GlobalDescriptor], path: str | Path) -> None:
    """Write descriptors as a DSC1 file (ids + float32 values)."""
    if descriptors:
        dims = {d.dim for d in descriptors}
        if len(dims) != 1:
            raise DimensionMismatch(f"descriptors have mixed dims {sorted(dims)}")
        dim = dims.pop()
    else:
        dim = 0
    try:
        with open(path, "wb") as fh:
            fh.write(DSC1_MAGIC)
            fh.write(struct.pack("<II", len(descriptors), dim))
            for desc in descriptors:
                id_bytes = desc.image_id.encode("utf-8")
                if len(id_bytes) > 0xFFFF:
                    raise DimensionMismatch(
                        f"image id too long for DSC1 record: {desc.image_id!r}"
                    )
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(np.ascontiguousarray(desc.values, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write descriptors to {path}: {exc}") from exc


def load_descriptors(path: str | Path, stage: str = RAW_STAGE) -> list[GlobalDescriptor]:
    """Read a DSC1 descriptor file.

    Stored values are float32; they are re-normalized to exact unit length in
    float64 on load so downstream cosine ranking sees unit vectors.  The stage
    tag is not stored on disk and must be supplied by the caller.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"descriptor file does not exist: {path}")
    data = path.read_bytes()
    if data[:4] != DSC1_MAGIC:
        raise MalformedFile(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise MalformedFile(f"{path}: truncated DSC1 header")
    count, dim = struct.unpack_from("<II", data, 4)
    offset = 12
    out: list[GlobalDescriptor] = []
    seen: set[str] = set()
    for record in range(count):
        if offset + 2 > len(data):
            raise MalformedFile(f"{path}: truncated at record {record}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + 4 * dim > len(data):
            raise MalformedFile(f"{path}: truncated at record {record}")
        image_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(
            np.float64
        )
        offset += 4 * dim
        if image_id in seen:
            raise DuplicateId(f"{path}: duplicate descriptor id {image_id!r}")
        seen.add(image_id)
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            raise MalformedFile(f"{path}: zero-norm descriptor record {image_id!r}")
        out.append(GlobalDescriptor(values=values / norm, image_id=image_id, stage=stage))
    if offset != len(data):
        raise MalformedFile(f"{path}: {len(data) - offset} trailing bytes after records")
    return out

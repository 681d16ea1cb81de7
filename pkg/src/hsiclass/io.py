"""File formats and dataset splits.

Formats
-------
flat-f32 stack (cubes, fields, confidence maps):
    16-byte header: magic b"HSF1", then planes, height, width as
    little-endian uint32. Payload: planes*height*width little-endian
    float32 values, plane-major, rows within a plane row-major.
    For cubes planes = bands; for fields planes = K.

envi-bsq:
    Text header ``<data file>.hdr`` (falling back to the data path with
    its extension replaced by ``.hdr``) with at least samples, lines,
    bands, data type, interleave. Only BSQ interleave and data types
    4 (float32) / 2 (int16) are supported; ``byte order`` defaults to 0.

csv matrices:
    Row-major, no header row, comma separator. A cube is n rows
    (pixels, row-major) by d columns (bands), so height/width must be
    passed to load_cube. A label map is height rows by width columns.

pgm:
    P5 (binary) written; P2 and P5 read. maxval 255, or 65535 with
    big-endian 16-bit samples when labels exceed 255.

Split manifests and all reports are CSV; floats are formatted with
repr() so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import HiddenField, HyperCube, LabelMap, Labeling

STACK_MAGIC = b"HSF1"

CUBE_FORMATS = ("flat-f32", "envi-bsq", "csv-matrix")
LABEL_FORMATS = ("pgm", "csv")


class FormatError(ValueError):
    """Malformed or mismatched file content."""


class SplitError(ValueError):
    """Requested split cannot be drawn from the labeled pixels."""


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal form; keeps CSV bytes reproducible."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# flat-f32 stack container


def write_f32_stack(path, stack: np.ndarray) -> None:
    stack = np.asarray(stack, dtype=np.float32)
    if stack.ndim != 3:
        raise ValueError("stack must be (planes, height, width)")
    planes, height, width = stack.shape
    with open(path, "wb") as fh:
        fh.write(STACK_MAGIC)
        fh.write(struct.pack("<III", planes, height, width))
        fh.write(np.ascontiguousarray(stack, dtype="<f4").tobytes())


def read_f32_stack(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != STACK_MAGIC:
            raise FormatError(f"{path}: not a flat-f32 stack (bad magic)")
        planes, height, width = struct.unpack("<III", header[4:])
        count = planes * height * width
        payload = fh.read()
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != count:
        raise FormatError(
            f"{path}: expected {count} float32 values, found {data.size}"
        )
    return data.reshape(planes, height, width).astype(np.float64)


# ---------------------------------------------------------------------------
# ENVI (BSQ interleave only)

_ENVI_DTYPES = {2: np.dtype("<i2"), 4: np.dtype("<f4")}


def _envi_header_path(path: Path) -> Path:
    appended = Path(str(path) + ".hdr")
    if appended.exists():
        return appended
    return path.with_suffix(".hdr")


def _parse_envi_header(text: str) -> dict:
    fields = {}
    for match in re.finditer(r"^\s*([\w ]+?)\s*=\s*(\{[^}]*\}|[^\n]*)", text, re.M):
        key = match.group(1).strip().lower()
        fields[key] = match.group(2).strip().strip("{}").strip()
    return fields


def _read_envi_cube(path: Path) -> np.ndarray:
    hdr_path = _envi_header_path(path)
    if not hdr_path.exists():
        raise FormatError(f"{path}: ENVI header {hdr_path} not found")
    fields = _parse_envi_header(hdr_path.read_text())
    missing = [k for k in ("samples", "lines", "bands", "data type", "interleave") if k not in fields]
    if missing:
        raise FormatError(f"{hdr_path}: missing required keys {missing}")
    width = int(fields["samples"])
    height = int(fields["lines"])
    bands = int(fields["bands"])
    dtype_code = int(fields["data type"])
    interleave = fields["interleave"].lower()
    if interleave != "bsq":
        raise FormatError(f"{hdr_path}: only BSQ interleave is supported, got {interleave!r}")
    if dtype_code not in _ENVI_DTYPES:
        raise FormatError(f"{hdr_path}: unsupported data type {dtype_code} (need 2 or 4)")
    dtype = _ENVI_DTYPES[dtype_code]
    if int(fields.get("byte order", "0")) == 1:
        dtype = dtype.newbyteorder(">")
    offset = int(fields.get("header offset", "0"))
    expected = bands * height * width
    raw = path.read_bytes()[offset:]
    data = np.frombuffer(raw, dtype=dtype)
    if data.size < expected:
        raise FormatError(
            f"{path}: header declares {expected} samples but file holds {data.size}"
        )
    return data[:expected].astype(np.float64).reshape(bands, height, width)


def _write_envi_cube(path: Path, cube: HyperCube) -> None:
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())
    hdr = (
        "ENVI\n"
        f"samples = {cube.width}\n"
        f"lines = {cube.height}\n"
        f"bands = {cube.bands}\n"
        "header offset = 0\n"
        "data type = 4\n"
        "interleave = bsq\n"
        "byte order = 0\n"
    )
    Path(str(path) + ".hdr").write_text(hdr)


# ---------------------------------------------------------------------------
# CSV matrices


def _write_csv_matrix(path, matrix: np.ndarray, integer: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            if integer:
                writer.writerow([int(v) for v in row])
            else:
                writer.writerow([fmt_float(v) for v in row])


def _read_csv_matrix(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if record:
                rows.append([float(v) for v in record])
    if not rows:
        raise FormatError(f"{path}: empty CSV matrix")
    return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# PGM


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.min(initial=0) < 0:
        raise ValueError("PGM wants a 2-d nonnegative image")
    maxval = 255 if image.max(initial=0) <= 255 else 65535
    if image.max(initial=0) > 65535:
        raise ValueError("PGM supports values up to 65535")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode())
        if maxval <= 255:
            fh.write(image.astype(np.uint8).tobytes())
        else:
            fh.write(image.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # Header tokens may be separated by arbitrary whitespace and comments.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P2":
        values = np.array(raw[pos:].split(), dtype=np.int64)
    elif magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        values = np.frombuffer(raw[pos:], dtype=dtype, count=width * height).astype(np.int64)
    else:
        raise FormatError(f"{path}: unsupported PGM magic {magic!r}")
    if values.size != width * height:
        raise FormatError(f"{path}: PGM payload does not match declared size")
    return values.reshape(height, width)


# ---------------------------------------------------------------------------
# Cube / label map entry points


def save_cube(cube: HyperCube, path, fmt: str = "flat-f32") -> None:
    path = Path(path)
    if fmt == "flat-f32":
        write_f32_stack(path, cube.data)
    elif fmt == "envi-bsq":
        _write_envi_cube(path, cube)
    elif fmt == "csv-matrix":
        _write_csv_matrix(path, cube.as_feature_matrix().T)
    else:
        raise ValueError(f"unknown cube format {fmt!r}")


def load_cube(path, fmt: str = "flat-f32", *, height: int | None = None,
              width: int | None = None) -> HyperCube:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if fmt == "flat-f32":
        return HyperCube(read_f32_stack(path))
    if fmt == "envi-bsq":
        return HyperCube(_read_envi_cube(path))
    if fmt == "csv-matrix":
        if height is None or width is None:
            raise ValueError("csv-matrix cubes need explicit height and width")
        matrix = _read_csv_matrix(path)
        if matrix.shape[0] != height * width:
            raise FormatError(
                f"{path}: {matrix.shape[0]} pixel rows, expected {height * width}"
            )
        return HyperCube(matrix.T.reshape(-1, height, width))
    raise ValueError(f"unknown cube format {fmt!r}")


def save_labels(labels: LabelMap | Labeling, path, fmt: str = "pgm") -> None:
    if fmt == "pgm":
        write_pgm(path, labels.labels)
    elif fmt == "csv":
        _write_csv_matrix(path, labels.labels, integer=True)
    else:
        raise ValueError(f"unknown label format {fmt!r}")


def load_labels(path, fmt: str = "pgm") -> LabelMap:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if fmt == "pgm":
        return LabelMap(read_pgm(path))
    if fmt == "csv":
        matrix = _read_csv_matrix(path)
        if not np.all(matrix == np.round(matrix)):
            raise FormatError(f"{path}: labels must be integral")
        return LabelMap(matrix.astype(np.int64))
    raise ValueError(f"unknown label format {fmt!r}")


def load_labeling(path) -> Labeling:
    return Labeling(read_pgm(path))


def save_field(hidden: HiddenField, path) -> None:
    write_f32_stack(path, hidden.as_image_stack())


def load_field(path) -> HiddenField:
    stack = read_f32_stack(path)
    k, height, width = stack.shape
    return HiddenField(stack.reshape(k, -1), height, width)


# ---------------------------------------------------------------------------
# Train / validation / test splits


@dataclass(frozen=True)
class SplitSpec:
    """How to sample labeled pixels into train/validation/test."""

    samples_per_class: int
    validation_samples: int = 0
    seed: int = 0
    per_class_validation: bool = False

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.validation_samples < 0:
            raise ValueError("validation_samples must be >= 0")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class DatasetBundle:
    cube: HyperCube
    truth: LabelMap
    train_indices: np.ndarray
    validation_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        sets = [self.train_indices, self.validation_indices, self.test_indices]
        merged = np.concatenate(sets)
        if len(np.unique(merged)) != merged.size:
            raise ValueError("split index sets overlap")
        if np.any(self.truth.flat()[merged] == 0):
            raise ValueError("split contains unlabeled pixels")


def make_splits(truth: LabelMap, spec: SplitSpec) -> SplitIndices:
    """Sample per-class training pixels, then validation, then the rest.

    Training: uniform without replacement within each class; a class with
    fewer pixels than requested contributes all of them (with a warning).
    Validation: uniform over the remaining labeled pixels (class-agnostic
    unless spec.per_class_validation). Test: every remaining labeled pixel.
    """
    flat = truth.flat()
    if not np.any(flat > 0):
        raise SplitError("no labeled pixels to split")
    rng = np.random.default_rng(spec.seed)
    train: list[np.ndarray] = []
    for cls in range(1, truth.k + 1):
        members = np.flatnonzero(flat == cls)
        if members.size == 0:
            continue
        if members.size < spec.samples_per_class:
            warnings.warn(
                f"class {cls} has only {members.size} labeled pixels "
                f"(requested {spec.samples_per_class}); using all of them",
                stacklevel=2,
            )
            take = members
        else:
            take = rng.choice(members, size=spec.samples_per_class, replace=False)
        train.append(np.sort(take))
    train_idx = np.sort(np.concatenate(train)) if train else np.empty(0, np.int64)

    remaining = np.setdiff1d(np.flatnonzero(flat > 0), train_idx)
    if spec.per_class_validation:
        val: list[np.ndarray] = []
        for cls in range(1, truth.k + 1):
            members = remaining[flat[remaining] == cls]
            if members.size < spec.validation_samples:
                raise SplitError(
                    f"class {cls}: validation wants {spec.validation_samples} "
                    f"pixels but only {members.size} remain"
                )
            val.append(rng.choice(members, size=spec.validation_samples, replace=False))
        val_idx = np.sort(np.concatenate(val)) if val else np.empty(0, np.int64)
    else:
        if remaining.size < spec.validation_samples:
            raise SplitError(
                f"validation wants {spec.validation_samples} pixels but only "
                f"{remaining.size} labeled pixels remain after training"
            )
        val_idx = np.sort(rng.choice(remaining, size=spec.validation_samples, replace=False))

    test_idx = np.setdiff1d(remaining, val_idx)
    return SplitIndices(train_idx.astype(np.int64), val_idx.astype(np.int64),
                        test_idx.astype(np.int64))


def save_manifest(splits: SplitIndices, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["set", "index"])
        for name, indices in (("train", splits.train),
                              ("validation", splits.validation),
                              ("test", splits.test)):
            for idx in indices:
                writer.writerow([name, int(idx)])


def load_manifest(path) -> SplitIndices:
    buckets: dict[str, list[int]] = {"train": [], "validation": [], "test": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["set", "index"]:
            raise FormatError(f"{path}: not a split manifest")
        for name, idx in reader:
            if name not in buckets:
                raise FormatError(f"{path}: unknown split set {name!r}")
            buckets[name].append(int(idx))
    return SplitIndices(*(np.asarray(buckets[k], dtype=np.int64)
                          for k in ("train", "validation", "test")))

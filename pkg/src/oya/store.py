"""On-disk formats: patch stores, scenes, swaths, field arrays, grid specs.

Binary container: little-endian IEEE-754 arrays preceded by a 16-byte header

    magic "OYAP" | version u16 | rows u16 | cols u16 | channels u16 | kind u32

kind 0 holds a full record (x float32, then y float32, then mask uint8);
kind 1 holds a single float32 field of shape (rows, cols) or (rows, cols, C).
All writes are deterministic so re-writing identical content is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .grid import ChannelDescriptor, GeoScene, GridSpec, PatchRecord, PrecipSwath

MAGIC = b"OYAP"
FORMAT_VERSION = 1
KIND_RECORD = 0
KIND_FIELD = 1
_HEADER = struct.Struct("<4sHHHHI")

MANIFEST_NAME = "manifest.txt"
RECORD_DIR = "records"


class StoreFormatError(ValueError):
    """A file does not conform to the expected on-disk format."""


def _pack_header(rows: int, cols: int, channels: int, kind: int) -> bytes:
    for v, label in ((rows, "rows"), (cols, "cols"), (channels, "channels")):
        if not 0 < v < 2**16:
            raise ValueError(f"{label} {v} does not fit the u16 header field")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols, channels, kind)


def _unpack_header(buf: bytes, path) -> tuple[int, int, int, int]:
    if len(buf) < _HEADER.size:
        raise StoreFormatError(f"{path}: truncated header")
    magic, version, rows, cols, channels, kind = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise StoreFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    return rows, cols, channels, kind


def record_to_bytes(rec: PatchRecord) -> bytes:
    rows, cols = rec.y.shape
    channels = rec.x.shape[2]
    x = np.ascontiguousarray(rec.x, dtype="<f4")
    y = np.ascontiguousarray(rec.y, dtype="<f4")
    m = np.ascontiguousarray(rec.m.astype(np.uint8))
    return b"".join(
        [_pack_header(rows, cols, channels, KIND_RECORD), x.tobytes(), y.tobytes(), m.tobytes()]
    )


def record_from_bytes(buf: bytes, path="<bytes>") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols, channels, kind = _unpack_header(buf, path)
    if kind != KIND_RECORD:
        raise StoreFormatError(f"{path}: expected a record file, got kind {kind}")
    nx = rows * cols * channels * 4
    ny = rows * cols * 4
    nm = rows * cols
    off = _HEADER.size
    if len(buf) != off + nx + ny + nm:
        raise StoreFormatError(f"{path}: payload size mismatch")
    x = np.frombuffer(buf, dtype="<f4", count=rows * cols * channels, offset=off)
    y = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=off + nx)
    m = np.frombuffer(buf, dtype=np.uint8, count=rows * cols, offset=off + nx + ny)
    return (
        x.reshape(rows, cols, channels).copy(),
        y.reshape(rows, cols).copy(),
        m.reshape(rows, cols).astype(bool),
    )


def write_field(path, arr: np.ndarray) -> None:
    """Write one float32 field, shape (rows, cols) or (rows, cols, C)."""
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        rows, cols = arr.shape
        channels = 1
    elif arr.ndim == 3:
        rows, cols, channels = arr.shape
    else:
        raise ValueError("field must be 2-d or 3-d")
    Path(path).write_bytes(
        _pack_header(rows, cols, channels, KIND_FIELD) + np.ascontiguousarray(arr).tobytes()
    )


def read_field(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    rows, cols, channels, kind = _unpack_header(buf, path)
    if kind != KIND_FIELD:
        raise StoreFormatError(f"{path}: expected a field file, got kind {kind}")
    n = rows * cols * channels
    if len(buf) != _HEADER.size + 4 * n:
        raise StoreFormatError(f"{path}: payload size mismatch")
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size)
    shape = (rows, cols) if channels == 1 else (rows, cols, channels)
    return arr.reshape(shape).copy()


def _fmt_ts(t: datetime | None) -> str:
    return "-" if t is None else t.isoformat()


def _parse_ts(s: str) -> datetime | None:
    return None if s == "-" else datetime.fromisoformat(s)


def grid_spec_lines(g: GridSpec, prefix: str = "grid.") -> list[str]:
    return [
        f"{prefix}lat_min: {float(g.lat_min)!r}",
        f"{prefix}lat_max: {float(g.lat_max)!r}",
        f"{prefix}lon_min: {float(g.lon_min)!r}",
        f"{prefix}lon_max: {float(g.lon_max)!r}",
        f"{prefix}spacing: {float(g.spacing)!r}",
        f"{prefix}rows: {int(g.rows)}",
        f"{prefix}cols: {int(g.cols)}",
    ]


def grid_spec_from_keys(kv: dict, prefix: str = "grid.") -> GridSpec:
    try:
        return GridSpec(
            lat_min=float(kv[prefix + "lat_min"]),
            lat_max=float(kv[prefix + "lat_max"]),
            lon_min=float(kv[prefix + "lon_min"]),
            lon_max=float(kv[prefix + "lon_max"]),
            spacing=float(kv[prefix + "spacing"]),
            rows=int(kv[prefix + "rows"]),
            cols=int(kv[prefix + "cols"]),
        )
    except KeyError as e:
        raise StoreFormatError(f"missing grid key {e}") from None


def write_grid_spec(path, g: GridSpec) -> None:
    Path(path).write_text("\n".join(grid_spec_lines(g)) + "\n")


def read_grid_spec(path) -> GridSpec:
    kv = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        kv[key.strip()] = value.strip()
    return grid_spec_from_keys(kv)


def _channel_line(c: ChannelDescriptor) -> str:
    return f"channel: {c.name}|{float(c.center_wavelength)!r}|{c.category}"


def _parse_channel(text: str) -> ChannelDescriptor:
    parts = text.split("|")
    if len(parts) != 3:
        raise StoreFormatError(f"bad channel line: {text!r}")
    return ChannelDescriptor(parts[0], float(parts[1]), parts[2])


@dataclass
class PatchStore:
    """In-memory view of a patch store directory."""

    grid: GridSpec
    channels: list[ChannelDescriptor]
    split: str
    records: list[PatchRecord]


def write_patch_store(
    root,
    records: list[PatchRecord],
    grid: GridSpec,
    channels: list[ChannelDescriptor],
    split: str,
) -> Path:
    """Write manifest plus one binary file per record; deterministic bytes."""
    root = Path(root)
    rec_dir = root / RECORD_DIR
    rec_dir.mkdir(parents=True, exist_ok=True)
    lines = ["format: oya-patch-store", f"version: {FORMAT_VERSION}", f"split: {split}"]
    lines += grid_spec_lines(grid)
    lines += [_channel_line(c) for c in channels]
    lines.append("records:")
    for i, rec in enumerate(records):
        if rec.x.shape[2] != len(channels):
            raise ValueError(f"record {i} has {rec.x.shape[2]} channels, manifest {len(channels)}")
        name = f"patch_{i:05d}.bin"
        (rec_dir / name).write_bytes(record_to_bytes(rec))
        lines.append(f"{name}|{rec.row}|{rec.col}|{_fmt_ts(rec.t_start)}|{_fmt_ts(rec.t_end)}")
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return root


def read_patch_store(root) -> PatchStore:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no patch store manifest at {manifest}")
    kv: dict[str, str] = {}
    channels: list[ChannelDescriptor] = []
    entries: list[str] = []
    in_records = False
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        if in_records:
            entries.append(line)
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "records":
            in_records = True
        elif key == "channel":
            channels.append(_parse_channel(value))
        else:
            kv[key] = value
    if kv.get("format") != "oya-patch-store":
        raise StoreFormatError(f"{manifest}: not a patch store manifest")
    grid = grid_spec_from_keys(kv)
    records = []
    for entry in entries:
        name, row, col, ts, te = entry.split("|")
        x, y, m = record_from_bytes((root / RECORD_DIR / name).read_bytes(), name)
        records.append(
            PatchRecord(x=x, y=y, m=m, row=int(row), col=int(col), t_start=_parse_ts(ts), t_end=_parse_ts(te))
        )
    return PatchStore(grid=grid, channels=channels, split=kv.get("split", ""), records=records)


def write_scene(path_stem, scene: GeoScene) -> None:
    """Write NAME.txt (metadata) and NAME.bin (channel stack)."""
    stem = Path(path_stem)
    lines = [
        "format: oya-scene",
        f"version: {FORMAT_VERSION}",
        f"t_start: {scene.t_start.isoformat()}",
        f"t_end: {scene.t_end.isoformat()}",
    ]
    lines += grid_spec_lines(scene.grid)
    lines += [_channel_line(c) for c in scene.channels]
    stem.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    write_field(stem.with_suffix(".bin"), scene.data)


def read_scene(path_stem) -> GeoScene:
    stem = Path(path_stem)
    meta = stem.with_suffix(".txt")
    if not meta.exists():
        raise FileNotFoundError(f"no scene metadata at {meta}")
    kv: dict[str, str] = {}
    channels: list[ChannelDescriptor] = []
    for line in meta.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "channel":
            channels.append(_parse_channel(value))
        else:
            kv[key] = value
    if kv.get("format") != "oya-scene":
        raise StoreFormatError(f"{meta}: not a scene file")
    data = read_field(stem.with_suffix(".bin"))
    if data.ndim == 2:
        data = data[:, :, None]
    return GeoScene(
        t_start=datetime.fromisoformat(kv["t_start"]),
        t_end=datetime.fromisoformat(kv["t_end"]),
        grid=grid_spec_from_keys(kv),
        channels=channels,
        data=data,
    )


def write_swath_csv(path, s: PrecipSwath) -> None:
    lines = ["lat,lon,time,rate"]
    times = s.time.astype("datetime64[us]").astype(object)
    for i in range(len(s)):
        lines.append(
            f"{float(s.lat[i])!r},{float(s.lon[i])!r},{times[i].isoformat()},{float(s.rate[i])!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_swath_csv(path) -> PrecipSwath:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "lat,lon,time,rate":
        raise StoreFormatError(f"{path}: expected header 'lat,lon,time,rate'")
    lat, lon, time, rate = [], [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        a, b, c, d = line.split(",")
        lat.append(float(a))
        lon.append(float(b))
        time.append(np.datetime64(datetime.fromisoformat(c), "us"))
        rate.append(float(d))
    return PrecipSwath(
        lat=np.array(lat),
        lon=np.array(lon),
        time=np.array(time, dtype="datetime64[us]"),
        rate=np.array(rate),
    )

from datetime import datetime

import numpy as np
import pytest

from oya.grid import GeoScene, PrecipSwath
from oya.store import (
    StoreFormatError,
    read_field,
    read_grid_spec,
    read_patch_store,
    read_scene,
    read_swath_csv,
    record_from_bytes,
    record_to_bytes,
    write_field,
    write_grid_spec,
    write_patch_store,
    write_scene,
    write_swath_csv,
)
from oya.synthetic import channel_set

from conftest import random_record, small_grid


def test_record_bytes_round_trip(rng):
    rec = random_record(rng, size=16, channels=4)
    buf = record_to_bytes(rec)
    x, y, m = record_from_bytes(buf)
    assert np.array_equal(x, rec.x) and x.dtype == np.float32
    assert np.array_equal(y, rec.y)
    assert np.array_equal(m, rec.m)


def test_record_bad_magic_rejected(rng):
    buf = bytearray(record_to_bytes(random_record(rng)))
    buf[0] = ord(b"X")
    with pytest.raises(StoreFormatError):
        record_from_bytes(bytes(buf))


def test_patch_store_round_trip_byte_identical(tmp_path, rng):
    g = small_grid(8, 8)
    channels = channel_set(3)
    records = [random_record(rng, channels=3) for _ in range(5)]
    root = tmp_path / "store"
    write_patch_store(root, records, g, channels, split="train")
    store = read_patch_store(root)
    assert store.split == "train"
    assert store.grid == g
    assert store.channels == channels
    assert len(store.records) == 5
    for a, b in zip(records, store.records):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.m, b.m)
        assert (a.row, a.col, a.t_start, a.t_end) == (b.row, b.col, b.t_start, b.t_end)

    # write what was read elsewhere: every byte must match
    other = tmp_path / "store2"
    write_patch_store(other, store.records, store.grid, store.channels, store.split)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            q = other / p.relative_to(root)
            assert q.read_bytes() == p.read_bytes(), p.name


def test_field_round_trip(tmp_path, rng):
    arr2 = rng.normal(size=(6, 9)).astype(np.float32)
    arr3 = rng.normal(size=(4, 5, 3)).astype(np.float32)
    write_field(tmp_path / "a.bin", arr2)
    write_field(tmp_path / "b.bin", arr3)
    assert np.array_equal(read_field(tmp_path / "a.bin"), arr2)
    assert np.array_equal(read_field(tmp_path / "b.bin"), arr3)


def test_field_reader_rejects_record_file(tmp_path, rng):
    (tmp_path / "r.bin").write_bytes(record_to_bytes(random_record(rng)))
    with pytest.raises(StoreFormatError):
        read_field(tmp_path / "r.bin")


def test_grid_spec_file_round_trip(tmp_path):
    g = small_grid(40, 120, spacing=3.0, lat_max=60.0, lon_min=-180.0)
    write_grid_spec(tmp_path / "g.txt", g)
    assert read_grid_spec(tmp_path / "g.txt") == g


def test_scene_round_trip(tmp_path, rng):
    g = small_grid(8, 8)
    scene = GeoScene(
        t_start=datetime(2021, 4, 9, 13, 15),
        t_end=datetime(2021, 4, 9, 13, 30),
        grid=g,
        channels=channel_set(2),
        data=rng.normal(250, 20, (8, 8, 2)).astype(np.float32),
    )
    write_scene(tmp_path / "s", scene)
    back = read_scene(tmp_path / "s")
    assert back.t_start == scene.t_start and back.t_end == scene.t_end
    assert back.grid == scene.grid and back.channels == scene.channels
    assert np.array_equal(back.data, scene.data)


def test_swath_csv_round_trip(tmp_path, rng):
    n = 20
    s = PrecipSwath(
        lat=rng.uniform(-50, 50, n),
        lon=rng.uniform(-170, 170, n),
        time=np.datetime64("2021-04-09T13:15:00", "us")
        + rng.integers(0, 10**9, n).astype("timedelta64[us]"),
        rate=rng.uniform(0, 20, n),
    )
    write_swath_csv(tmp_path / "s.csv", s)
    back = read_swath_csv(tmp_path / "s.csv")
    assert np.array_equal(back.lat, s.lat)
    assert np.array_equal(back.lon, s.lon)
    assert np.array_equal(back.time, s.time)
    assert np.array_equal(back.rate, s.rate)


def test_missing_manifest_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        read_patch_store(tmp_path / "nope")

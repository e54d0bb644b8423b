from datetime import datetime, timedelta

import numpy as np
import pytest

from oya.grid import GridSpec, PatchRecord


def small_grid(rows=16, cols=16, spacing=0.045, lat_max=10.0, lon_min=20.0) -> GridSpec:
    return GridSpec.from_origin(lat_max=lat_max, lon_min=lon_min, rows=rows, cols=cols, spacing=spacing)


def random_record(rng, size=8, channels=3, rain_frac=0.4, valid_frac=0.6, t_start=None) -> PatchRecord:
    x = rng.normal(250, 25, size=(size, size, channels)).astype(np.float32)
    m = rng.random((size, size)) < valid_frac
    y = np.where(rng.random((size, size)) < rain_frac, rng.gamma(1.5, 2.0, (size, size)), 0.0)
    y = np.where(m, y, 0.0).astype(np.float32)
    return PatchRecord(
        x=x,
        y=y,
        m=m,
        row=0,
        col=0,
        t_start=t_start or datetime(2020, 1, 1),
        t_end=(t_start or datetime(2020, 1, 1)) + timedelta(minutes=15),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

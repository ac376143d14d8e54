from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from crossflow import flowdata as fd

MONDAY = datetime(2019, 3, 4, tzinfo=timezone.utc)


def make_flow(values, interval_minutes=15, origin=MONDAY, mode="bike"):
    values = np.asarray(values)
    return fd.FlowMatrix(
        mode=mode,
        interval_minutes=interval_minutes,
        origin_time=origin,
        station_ids=[f"s{j}" for j in range(values.shape[1])],
        values=values,
    )


def random_flow(rng, n_bins=60, n_stations=4, interval_minutes=15, lam=3.0, mode="bike"):
    return make_flow(rng.poisson(lam, size=(n_bins, n_stations)), interval_minutes=interval_minutes, mode=mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def trip(mode, start, end, start_loc, end_loc):
    return fd.TripRecord(
        mode=mode,
        start_time=start,
        end_time=end,
        start_loc=start_loc,
        end_loc=end_loc,
    )


def at(hours=0, minutes=0, days=0):
    return MONDAY + timedelta(days=days, hours=hours, minutes=minutes)

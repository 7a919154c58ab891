import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from parcelsense import geodata, synthcity


@pytest.fixture(scope="session")
def benchmark_scene():
    return synthcity.generate_scene(synthcity.default_benchmark())


@pytest.fixture()
def solid_parcel():
    """100x100 raster fully covered by parcel 1."""
    raster = geodata.RasterGrid.from_array(np.full((100, 100, 3), 90, dtype=np.uint8))
    pmap = geodata.ParcelMap.from_array(np.ones((100, 100), dtype=np.uint16))
    (record,) = geodata.build_parcel_records(pmap)
    return raster, pmap, record


def make_map(width, height, painter):
    """Build a ParcelMap by calling painter(ids) on a writable array."""
    ids = np.zeros((height, width), dtype=np.uint16)
    painter(ids)
    return geodata.ParcelMap.from_array(ids)

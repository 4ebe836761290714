from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dlfs.metastore import FILE, FileMeta, MetaStore
from dlfs.objstore import MemoryStore, ObjectKey, RecordingStore

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MiB = 1 << 20


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def publish(store, meta, path: str, data: bytes, bucket: str = "b") -> ObjectKey:
    key = ObjectKey(bucket, path.lstrip("/"))
    om = store.put(key, data)
    meta.set_meta(FileMeta(path, FILE, om.size, 0.0, key))
    return key


@pytest.fixture
def recorded():
    """A recording store over memory plus an empty metastore."""
    return RecordingStore(MemoryStore()), MetaStore()

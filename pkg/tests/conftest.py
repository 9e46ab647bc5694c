"""Shared fixtures: backend access and small dataset builders."""

import numpy as np
import pytest

from fedanom.backends import pure as pure_backend

try:
    from fedanom.backends import _fastpath as fast_backend
except ImportError:  # pragma: no cover - extension not built
    fast_backend = None

ALL_BACKENDS = [pure_backend] + ([fast_backend] if fast_backend else [])


@pytest.fixture(params=ALL_BACKENDS, ids=lambda b: b.NAME)
def backend(request):
    """Runs a test once per available compute backend."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_xy(rng, n=64, d=5):
    """A small standardized-looking batch with binary labels."""
    x = rng.standard_normal((n, d))
    y = (rng.random(n) < 0.2).astype(np.float64)
    return x, y


def make_dataset(seed=0, n=120, d=5, tenant_id=0, anomaly_rate=0.1):
    """A synthetic TenantDataset without the full generator machinery."""
    from fedanom.telemetry import TenantDataset

    g = np.random.default_rng(seed)
    ts = np.arange(n, dtype=np.int64) * 600
    feats = g.standard_normal((n, d))
    labels = (g.random(n) < anomaly_rate).astype(np.int64)
    return TenantDataset(tenant_id, ts, feats, labels)

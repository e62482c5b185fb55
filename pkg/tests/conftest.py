import hashlib
import inspect
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from affine_ldp import load_model, mc

FIXTURES = Path(resources.files("affine_ldp") / "fixtures")

# filled by the acceptance tests and printed at the end of the session
ACCEPTANCE = {}


def fixture_path(name: str) -> Path:
    return FIXTURES / f"model_{name}.toml"


@pytest.fixture(scope="session")
def lattice_model():
    return load_model(fixture_path("lattice"))


@pytest.fixture(scope="session")
def exponential_model():
    return load_model(fixture_path("exponential"))


@pytest.fixture(scope="session")
def poisson_model():
    return load_model(fixture_path("poisson"))


@pytest.fixture(scope="session")
def all_models(lattice_model, exponential_model, poisson_model):
    return {"lattice": lattice_model, "exponential": exponential_model, "poisson": poisson_model}


def _cache_key(name, times, config, theta_tag):
    src = inspect.getsource(mc).encode()
    h = hashlib.sha256(src)
    h.update(fixture_path(name).read_bytes())
    h.update(repr((list(times), config.to_dict(), theta_tag)).encode())
    return h.hexdigest()[:24]


@pytest.fixture(scope="session")
def mc_batch(request):
    """Simulate (or reload) a path batch; keyed by simulator source, model file and settings."""
    cache_dir = Path(request.config.cache.mkdir("affine_ldp_mc"))

    def get(name, times, config, tilted=None):
        tag = None if tilted is None else round(float(tilted.theta), 14)
        path = cache_dir / f"{name}_{_cache_key(name, times, config, tag)}.npz"
        if path.exists():
            z = np.load(path)
            return mc.PathBatch(z["times"], z["V"], z["X"], z["counts"], z["log_weight"],
                                config, float(z["theta"]))
        batch = mc.simulate(load_model(fixture_path(name)), times, config, tilted)
        np.savez(path, times=batch.times, V=batch.V, X=batch.X, counts=batch.counts,
                 log_weight=batch.log_weight, theta=batch.theta)
        return batch

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

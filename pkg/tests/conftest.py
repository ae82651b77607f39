import pytest
from fastapi.testclient import TestClient
from app.main import app
from app.routers.system import get_config


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def use_config():
    """Sustituye el config del servicio por el PipelineConfig dado."""
    def _set(cfg):
        app.dependency_overrides[get_config] = lambda: cfg
        return cfg

    yield _set
    app.dependency_overrides.clear()

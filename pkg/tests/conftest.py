import pytest
from hypothesis import HealthCheck, settings
from app.core.config import get_settings
from app.core.metrics import reset_metrics
from app.schemas.data import SyntheticConfig
from app.schemas.network import Scale
from app.schemas.training import TrainConfig
from app.services import tensor_service
from app.services.tensor_service import Rng, rand_uniform

settings.register_profile("mtvideo", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("mtvideo")

TINY_SCALE = Scale(channel_div=16, frames=4, crop=16, fc_width=8)

# key = value overrides for a run that finishes in seconds
TINY_RUN = {
    "arch": "C3D",
    "scale.channel_div": "16",
    "scale.frames": "4",
    "scale.crop": "16",
    "scale.fc_width": "8",
    "short_edge": "16",
    "batch_size": "2",
    "epochs": "1",
    "val_fraction": "0.25",
    "synthetic.num_videos": "8",
    "synthetic.test_videos": "4",
    "synthetic.frames_per_video": "6",
    "synthetic.height": "16",
    "synthetic.width": "16",
    "synthetic.shape_size": "4",
    "synthetic.num_classes": "4",
}


@pytest.fixture(autouse=True)
def fresh_state():
    """Each test starts in 32-bit mode with an empty metrics registry."""
    get_settings.cache_clear()
    tensor_service.set_float64(False)
    reset_metrics()
    yield
    tensor_service.set_float64(False)
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def float64():
    with tensor_service.float64_mode():
        yield


@pytest.fixture
def clip(rng):
    """8 frames of 6x6 RGB in [0, 1)."""
    return rand_uniform(rng.child("clip"), (8, 6, 6, 3), 0.0, 1.0)


@pytest.fixture
def tiny_scale():
    return TINY_SCALE


@pytest.fixture
def synthetic_config():
    return SyntheticConfig(num_videos=8, test_videos=4, frames_per_video=6, height=16, width=16,
                           shape_size=4.0, num_classes=4)


@pytest.fixture
def pretext_config(synthetic_config):
    return TrainConfig(scale=TINY_SCALE, short_edge=16, batch_size=2, epochs=1, val_fraction=0.25,
                       synthetic=synthetic_config)


@pytest.fixture
def downstream_config(pretext_config):
    data = pretext_config.model_dump()
    data.update(phase="downstream", lr=None)
    return TrainConfig.model_validate(data)


@pytest.fixture
def tiny_cfg(tmp_path):
    """A .cfg file for TINY_RUN."""
    path = tmp_path / "tiny.cfg"
    path.write_text("# tiny desk run\n" + "".join(f"{k} = {v}\n" for k, v in TINY_RUN.items()), encoding="utf-8")
    return path

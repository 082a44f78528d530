import pytest

from panoscan import config
from panoscan.config import RunConfig
from panoscan.synth_data import load_manifest
from panoscan.synth_data import make_dataset

TINY = dict(
    n_yaw=4,
    n_pitch=2,
    render_res=16,
    erp_width=64,
    erp_height=32,
    feature_dim=8,
    hidden_dim=8,
    score_dim=8,
    gru_layers=2,
    critic_hidden=8,
    attention_dim=8,
    mlp_hidden=8,
    num_scanpaths=3,
    scanpath_length=3,
    epochs=2,
    batch_size=2,
    update_epochs=2,
    dataset_size=6,
    split=(0.5, 0.5),
    sweep_ks=(1, 2),
    sweep_ts=(2, 3),
)


@pytest.fixture
def tiny_cfg():
    return config.validate(RunConfig(**TINY))


@pytest.fixture(scope='session')
def tiny_data(tmpdir_factory):
    """Six 64x32 panoramas split 3/3, shared by every test that reads them."""
    out = tmpdir_factory.mktemp('data')
    make_dataset(out.strpath, 6, 0, (0.5, 0.5), 64, 32)
    return out


@pytest.fixture
def train_samples(tiny_data):
    return load_manifest(tiny_data.join('train.jsonl').strpath)


@pytest.fixture
def held_out_samples(tiny_data):
    return load_manifest(tiny_data.join('test.jsonl').strpath)

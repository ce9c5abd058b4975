import pytest

from rislab import dataset as dset
from rislab.codebook import calibrate
from rislab.evaluation import train_baseline
from rislab.neural import Baseline, Localizer
from rislab.scene import ObjectSpec, SceneTemplate, UEGrid
from rislab.schemas import DipoleProperties, FrequencyGrid, TrainConfig
from rislab.training import train

TINY_CFG = TrainConfig(epochs=3, batch_size=8, lr=1e-2, alpha=1e-4, seed=3, hidden=4, hidden2=4, embed_dim=3)


def make_tiny_template(n_points: int = 6) -> SceneTemplate:
    """3 x 3 box with two fences, 4 RIS elements (2 sensing), one single-dipole object."""
    return SceneTemplate(
        grid=FrequencyGrid(f_center=1.0, half_band=0.1, n_points=n_points),
        bs=(0.5, 1.5),
        ue_grid=UEGrid(1.2, 1.2, 1.8, 1.8, 2, 2),
        walls=((0.0, 0.0, 3.0, 0.0), (0.0, 3.0, 3.0, 3.0)),
        ris_sites=((2.6, 0.8), (2.6, 1.3), (2.6, 1.8), (2.6, 2.3)),
        sense_idx=(0, 2),
        objects=(ObjectSpec(props=DipoleProperties(f_res=1.2, chi=0.5, gamma_l=1.0), offsets=((0.0, 0.0),)),),
        trajectory=((0.6, 0.6), (2.2, 0.6), (2.2, 2.4), (0.6, 2.4)),
    )


@pytest.fixture(scope="session")
def tiny_tpl():
    return make_tiny_template()


@pytest.fixture(scope="session")
def tiny_dataset(tiny_tpl):
    # 4 configs x 3 SO states x 4 sites = 48 records
    return dset.generate(tiny_tpl, n_configs=4, n_so_samples=3, seed=7)


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return dset.split(tiny_dataset, tiny_dataset.header.seed)


@pytest.fixture(scope="session")
def tiny_trained(tiny_splits):
    train_split, val_split, _ = tiny_splits
    return train(train_split, val_split, TINY_CFG)


@pytest.fixture(scope="session")
def tiny_localizer(tiny_trained):
    return Localizer(params=tiny_trained.params, stats=tiny_trained.stats)


@pytest.fixture(scope="session")
def tiny_baseline(tiny_splits):
    train_split, val_split, _ = tiny_splits
    result = train_baseline(train_split, val_split, TINY_CFG, hidden=8)
    return Baseline(params=result.params, stats=result.stats)


@pytest.fixture(scope="session")
def tiny_codebook(tiny_localizer, tiny_tpl, tiny_dataset):
    return calibrate(tiny_localizer, tiny_tpl, tiny_dataset.configs(), resolution=4)


@pytest.fixture
def ledger(tmp_path, monkeypatch):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    monkeypatch.setenv("RIS_LAB_DB", url)
    monkeypatch.setenv("RIS_LAB_WORKERS", "1")
    return url

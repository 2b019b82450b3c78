"""Shared fixtures. The planted benchmark and the trained model pair are
built once per session because training dominates the suite's runtime."""

import numpy as np
import pytest

from rsvae.cvae import CvaeConfig
from rsvae.harness import base_rows, train_on_rows, train_svae_pair
from rsvae.synthoracle import SynthConfig, generate_synth


def desk_config(fs, table, **overrides):
    kw = dict(latent_dim=8, hidden_dim=256, learning_rate=1e-4, epochs=40, batch_size=128, seed=0)
    kw.update(overrides)
    return CvaeConfig(fs.feat_dim, table.sem_dim, **kw)


@pytest.fixture(scope="session")
def desk():
    """Contaminated desk benchmark: (FeatureSet, SemanticTable, PlantedTruth)."""
    return generate_synth(SynthConfig())


@pytest.fixture(scope="session")
def clean():
    return generate_synth(SynthConfig(outlier_fraction=0.0))


@pytest.fixture(scope="session")
def desk_pair(desk):
    fs, table, _ = desk
    return train_svae_pair(fs, table, desk_config(fs, table), threshold=0.9, score="chi2")


@pytest.fixture(scope="session")
def clean_model(clean):
    fs, table, _ = clean
    model, _ = train_on_rows(fs, table, base_rows(fs), desk_config(fs, table))
    return model


# acceptance verdicts, one (key, PASS/FAIL, detail) per criterion
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key, verdict, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0][1:])):
        terminalreporter.write_line(f"{key} {verdict}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)

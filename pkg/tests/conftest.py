import dataclasses

import pytest

from mantis.gnn.model import GnnConfig
from mantis.pipelines import Inputs, PipelineConfig
from mantis.synth import WorldSpec, generate

TINY_GNN = GnnConfig(hidden_dim=16, layers=2, fanouts=[8, 4], epochs=8, folds=2, patience=4, batch_size=64)


def tiny_spec(**kw) -> WorldSpec:
    base = dict(n_benign=3000, days=14, n_campaigns=6, toplist_size=600)
    base.update(kw)
    return WorldSpec(**base)


def tiny_config(**kw) -> PipelineConfig:
    return dataclasses.replace(PipelineConfig(seed_floor=5, fpr_target=0.02, gnn=TINY_GNN), **kw)


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate(tiny_spec(), root)
    return root


@pytest.fixture(scope="session")
def tiny_inputs(tiny_world):
    return Inputs.load(tiny_world)


@pytest.fixture(scope="session")
def long_world(tmp_path_factory):
    """Long enough for four weekly encoders plus a short meta period."""
    root = tmp_path_factory.mktemp("long")
    generate(tiny_spec(days=36), root)
    return root


@pytest.fixture(scope="session")
def tiny_ensemble(long_world, tmp_path_factory):
    import datetime as dt

    from mantis.pipelines import build_ensemble, meta_ground_truth, weekly_encoders
    inputs = Inputs.load(long_world)
    cfg = tiny_config()
    last = inputs.last_day() - dt.timedelta(days=8)
    encoders = weekly_encoders(inputs, last, cfg, 4)
    taken = set().union(*(e.labeled_domains() for e in encoders))
    meta_gt = meta_ground_truth(inputs, last + dt.timedelta(days=1), last + dt.timedelta(days=6), cfg, exclude=taken)
    ens, report = build_ensemble(encoders, meta_gt, inputs, last, cfg)
    out = ens.save(tmp_path_factory.mktemp("ens") / "ensemble")
    return inputs, cfg, ens, report, out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

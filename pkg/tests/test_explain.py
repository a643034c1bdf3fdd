import numpy as np
import pytest

from mantis.explain import (check_partition, edge_importance, gradient_importance, perturbation_importance,
                            top_group_agreement, write_importance_csv)
from mantis.features import FEATURE_GROUPS
from mantis.gnn.model import GnnConfig
from mantis.gnn.train import labeled_nodes, train
from mantis.graph import NodeRef

from helpers import toy_world


@pytest.fixture(scope="module")
def trained():
    g, feats, labels = toy_world(13)
    cfg = GnnConfig(hidden_dim=16, layers=2, fanouts=[4, 3], epochs=10, folds=2, patience=4, batch_size=16)
    return g, feats, labels, train(g, feats, labels, cfg).model


def test_groups_must_partition():
    check_partition(FEATURE_GROUPS)
    groups = dict(FEATURE_GROUPS)
    first = next(iter(groups))
    with pytest.raises(ValueError):
        check_partition({**groups, first: groups[first][1:]})
    other = [k for k in groups if k != first][0]
    with pytest.raises(ValueError):
        check_partition({**groups, other: groups[other] + groups[first][:1]})


def test_importance_buckets(trained, tmp_path):
    g, feats, labels, model = trained
    nodes, y = labeled_nodes(g, labels)
    pa, pb = [], []
    pert = perturbation_importance(model, g, feats, nodes, y, per_node=pa)
    grad = gradient_importance(model, g, feats, nodes, y, per_node=pb)
    for rep in (pert, grad):
        assert set(rep) <= {"TP", "FP", "TN", "FN", "ALL"} and "ALL" in rep
        assert all(set(v) == set(FEATURE_GROUPS) for v in rep.values())
        assert all(s >= 0 for v in rep.values() for s in v.values())
    assert len(pa) == len(pb) == len(nodes)
    assert 0.0 <= top_group_agreement(pa, pb) <= 1.0
    for grp in FEATURE_GROUPS:
        assert np.isclose(pert["ALL"][grp], np.mean([p[grp] for p in pa]), rtol=0, atol=1e-12)
    assert set(perturbation_importance(model, g, feats, nodes[:3])) == {"ALL"}
    lines = write_importance_csv(pert, tmp_path / "imp.csv").read_text().splitlines()
    assert lines[0] == "bucket,group,score" and len(lines) == 1 + len(pert) * len(FEATURE_GROUPS)


def test_edge_ranking_matches_removal(trained):
    g, feats, _, model = trained
    from mantis.gnn.train import local_scores
    from mantis.graph import GraphOverlay
    target = NodeRef("apex", "bad2.com")
    ranked = edge_importance(model, g, feats, target)
    drops = [d for _, d in ranked]
    assert drops == sorted(drops, reverse=True) and ranked
    e, d = ranked[0]
    ov = GraphOverlay(g)
    base = float(local_scores(model, ov, feats, [target])[0])
    ov.remove_edge(*e)
    assert base - float(local_scores(model, ov, feats, [target])[0]) == d

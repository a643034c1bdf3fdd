import numpy as np
import pytest

from mantis.adversarial import (AttackBudget, AttackError, adversarial_train, attack_set, evaluate_under_attack,
                                mimic_ip, multi_domain_attack, random_mimic, robustness_curve, write_robustness_csv)
from mantis.gnn.model import GnnConfig
from mantis.gnn.train import labeled_nodes, local_scores, train
from mantis.graph import NodeRef

from helpers import toy_world

SMALL = dict(hidden_dim=16, layers=2, fanouts=[4, 3], epochs=15, folds=3, patience=5, batch_size=16)


@pytest.fixture(scope="module")
def trained():
    g, feats, labels = toy_world(11)
    res = train(g, feats, labels, GnnConfig(**SMALL))
    pool = sorted(n for n in g.nodes if n.kind == "ip" and n.key.startswith("10.0."))[:6]
    return g, feats, labels, res.model, pool


def test_mimic_strictly_lowers_score_and_leaves_graph(trained):
    g, feats, labels, model, pool = trained
    before = sorted(g.edges)
    target = NodeRef("apex", "bad3.com")
    r = mimic_ip(g, model, feats, target, pool, 3)
    assert sorted(g.edges) == before
    assert len(r.added) <= 3 and len(r.scores) == len(r.added) + 1
    assert all(b < a for a, b in zip(r.scores, r.scores[1:]))
    assert all(ip in pool for ip in r.added)
    assert float(local_scores(model, r.overlay, feats, [target])[0]) == r.scores[-1]
    with pytest.raises(AttackError):
        mimic_ip(g, model, feats, target, [], 1)


def test_multi_domain_attack_never_raises_total(trained):
    g, feats, labels, model, pool = trained
    controlled = [NodeRef("apex", f"bad{i}.com") for i in (1, 2, 3)]
    r = multi_domain_attack(g, model, feats, controlled, 4, pool)
    assert len(r.moves) <= 4
    assert all(b <= a for a, b in zip(r.totals, r.totals[1:]))
    assert all(r.overlay.ips_of(d) for d in controlled)


def test_budget_validation():
    with pytest.raises(ValueError):
        AttackBudget(n_ips=4)
    with pytest.raises(ValueError):
        AttackBudget(perturbation_rate=1.2)
    with pytest.raises(ValueError):
        AttackBudget(edge_budget=-1)


def test_attack_sets_are_nested():
    nodes = [NodeRef("apex", f"d{i}.com") for i in range(40)]
    y = np.array([i % 2 for i in range(40)])
    small, big = attack_set(nodes, y, 0.1, 3), attack_set(nodes, y, 0.3, 3)
    assert big[:len(small)] == small and all(y[nodes.index(n)] == 1 for n in big)


def test_random_mimic_adds_pool_edges(trained):
    g, _, _, _, pool = trained
    t = [NodeRef("apex", "bad1.com")]
    ov = random_mimic(g, t, pool, 2, np.random.default_rng(0))
    assert len(set(ov.ips_of(t[0])) - set(g.ips_of(t[0]))) <= 2
    assert set(ov.ips_of(t[0])) - set(g.ips_of(t[0])) <= set(pool)


def test_rate_zero_is_plain_training(trained):
    g, feats, labels, model, pool = trained
    cfg = GnnConfig(**SMALL)
    plain = train(g, feats, labels, cfg)
    adv = adversarial_train(g, feats, labels, cfg, AttackBudget(perturbation_rate=0.0), pool)
    assert plain.model.content_hash() == adv.model.content_hash()
    hard = adversarial_train(g, feats, labels, cfg, AttackBudget(perturbation_rate=0.3), pool)
    assert hard.model.content_hash() == adversarial_train(g, feats, labels, cfg, AttackBudget(perturbation_rate=0.3),
                                                          pool).model.content_hash()


def test_robustness_curve_csv(trained, tmp_path):
    g, feats, labels, model, pool = trained
    nodes, y = labeled_nodes(g, labels)
    rows = robustness_curve({"standard": model}, g, feats, nodes, y, pool, rates=(0.0, 0.1), n_ips=1)
    clean, _ = evaluate_under_attack(model, g, feats, nodes, y, pool, 0.0, 1)
    assert rows[0].accuracy == clean["accuracy"] and rows[0].attacked == 0
    assert rows[1].attacked == int(round(0.1 * y.sum()))
    text = write_robustness_csv(rows, tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "perturbation_rate,model_variant,accuracy,recall,fpr" and len(text) == 3

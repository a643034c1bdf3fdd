import numpy as np
import pytest

from mantis.gnn.train import forward
from mantis.pipelines import EnsembleModel, LeakageError, build_ensemble, encoder_embedding, predict_on_demand


def test_ensemble_round_trip(tiny_ensemble):
    inputs, cfg, ens, report, out = tiny_ensemble
    loaded = EnsembleModel.load(out)
    assert loaded.model_id == ens.model_id and loaded.encoder_ids == ens.encoder_ids
    d = sorted(ens.encoders[-1].labeled_domains())[0]
    a = predict_on_demand(ens, d, inputs, cfg)
    b = predict_on_demand(loaded, d, inputs, cfg)
    assert a.score == b.score and a.verdict == b.verdict
    assert report["n_test"] > 0 and len(report["single"]) == 4


def test_tampered_meta_rejected(tiny_ensemble, tmp_path):
    import shutil
    _, _, _, _, out = tiny_ensemble
    shutil.copytree(out, tmp_path / "e")
    with open(tmp_path / "e" / "meta.pkl", "ab") as fh:
        fh.write(b"x")
    with pytest.raises(ValueError):
        EnsembleModel.load(tmp_path / "e")


def test_in_graph_embeddings_match_full_graph(tiny_ensemble):
    inputs, cfg, ens, _, _ = tiny_ensemble
    full = []
    for enc in ens.encoders:
        nodes = sorted(enc.graph.domain_nodes())
        full.append({p.node: p.embedding for p in forward(enc.model, enc.graph, enc.features, nodes, gt=enc.gt)})
        for n in nodes[:20]:
            e = encoder_embedding(enc, n.key, None, ens.day, inputs, cfg)
            assert np.array_equal(e, full[-1][n])
    shared = sorted(set.intersection(*(set(f) for f in full)))[:20]
    assert shared
    for n in shared:
        x = np.concatenate([f[n] for f in full])
        r = predict_on_demand(ens, n.key, inputs, cfg)
        assert r.score == float(ens.meta.predict_proba(x[None, :])[0, 1])


def test_no_visibility_and_bad_names(tiny_ensemble):
    inputs, cfg, ens, _, _ = tiny_ensemble
    r = predict_on_demand(ens, "never-resolved-anywhere.example", inputs, cfg)
    assert r.verdict == "no-visibility" and r.score is None
    with pytest.raises(ValueError):
        predict_on_demand(ens, "not a name", inputs, cfg)


def test_meta_leakage_raises(tiny_ensemble):
    inputs, cfg, ens, _, _ = tiny_ensemble
    from mantis.intel import LabelSet
    leak = LabelSet()
    leak.add(sorted(ens.encoders[0].labeled_domains())[0], "malicious", "seed")
    with pytest.raises(LeakageError):
        build_ensemble(ens.encoders, leak, inputs, ens.day, cfg)
    with pytest.raises(ValueError):
        build_ensemble(ens.encoders[:3], leak, inputs, ens.day, cfg)

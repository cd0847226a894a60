"""Attention network: hand-unrolled oracle, gradient checks, invariances."""

import dataclasses

import numpy as np
import pytest

from ctxkg.errors import TrainingDiverged, ValidationError
from ctxkg.gat import (AttentionRecord, GatConfig, TrainTarget,
                       compile_message_graph, forward, grad_check,
                       graph_schema, init_model, ld_aware_loss,
                       load_checkpoint, loss_and_grads, predict,
                       save_checkpoint, split_indices, train)
from ctxkg.graph import (KnowledgeGraph, NodeClass, Relation, RelationClass,
                         build_graph)

VAR, GENE, PROG = NodeClass.VARIANT, NodeClass.GENE, NodeClass.PROGRAM


def chain_graph():
    """v0 -eqtl-> g0 -binding-> g1 with tiny explicit features."""
    nodes = [("v0", "variant", "1", 100), ("g0", "gene"), ("g1", "gene")]
    edges = [("v0", "g0", "eqtl", "v2g"), ("g0", "g1", "binding", "g2g")]
    feats = {
        "variant": {"v0": [0.3, -1.2, 0.7]},
        "gene": {"g0": [1.1, 0.4], "g1": [-0.6, 0.9]},
    }
    graph, _ = build_graph(nodes, edges, feature_tables=feats,
                           feature_dims={"variant": 3, "gene": 2, "program": 4})
    return graph


def random_graph(seed=0, n_var=8, n_gene=6, n_prog=3):
    rng = np.random.default_rng(seed)
    nodes = [(f"v{i}", "variant", "1", 1000 * (i + 1)) for i in range(n_var)]
    nodes += [(f"g{i}", "gene") for i in range(n_gene)]
    nodes += [(f"p{i}", "program") for i in range(n_prog)]
    edges = []
    for i in range(n_var):
        for g in rng.choice(n_gene, size=2, replace=False):
            edges.append((f"v{i}", f"g{g}", "eqtl", "v2g"))
        edges.append((f"v{i}", f"g{rng.integers(n_gene)}", "promoter", "v2g"))
    for _ in range(10):
        a, b = rng.integers(n_gene, size=2)
        edges.append((f"g{a}", f"g{b}", "binding", "g2g"))
    for g in range(n_gene):
        edges.append((f"g{g}", f"p{rng.integers(n_prog)}", "membership", "g2p"))
    feats = {
        "variant": {f"v{i}": rng.normal(size=5) for i in range(n_var)},
        "gene": {f"g{i}": rng.normal(size=4) for i in range(n_gene)},
        "program": {f"p{i}": rng.normal(size=3) for i in range(n_prog)},
    }
    graph, _ = build_graph(nodes, edges, feature_tables=feats,
                           feature_dims={"variant": 5, "gene": 4, "program": 3})
    target = TrainTarget.create(graph.ids[VAR],
                                rng.uniform(0.5, 8.0, size=n_var),
                                rng.uniform(1.0, 4.0, size=n_var))
    return graph, target


def leaky(x, s):
    return x if x >= 0 else s * x


def test_forward_matches_hand_unrolled_chain():
    graph = chain_graph()
    cfg = GatConfig(layers=2, hidden_dim=2, seed=7)
    model = init_model(graph, cfg)
    p = model.params

    xv = np.array([0.3, -1.2, 0.7])
    xg0 = np.array([1.1, 0.4])
    xg1 = np.array([-0.6, 0.9])
    h_v = p["proj/variant"] @ xv
    h_g0 = p["proj/gene"] @ xg0
    h_g1 = p["proj/gene"] @ xg1

    def attend(layer, rel, hu, hv):
        W = p[f"layer{layer}/{rel}/W"]
        a = p[f"layer{layer}/{rel}/a"]
        m, pd = W @ hu, W @ hv
        e = leaky(float(a[:2] @ m + a[2:] @ pd), cfg.leaky_slope)
        return m, e  # single incoming edge: softmax weight is exactly 1

    # layer 0: every node has exactly one incoming message, ReLU after
    m_g0, _ = attend(0, "eqtl", h_v, h_g0)
    m_g1, _ = attend(0, "binding", h_g0, h_g1)
    m_v, _ = attend(0, "eqtl__rev", h_g0, h_v)
    h1_v = np.maximum(m_v, 0.0)
    h1_g0 = np.maximum(m_g0, 0.0)
    h1_g1 = np.maximum(m_g1, 0.0)

    # layer 1 (last): no activation
    h2_v, _ = attend(1, "eqtl__rev", h1_g0, h1_v)
    want = float(p["head/w"] @ h2_v + p["head/b"][0])

    yhat, records = forward(model, graph)
    assert yhat.shape == (1,)
    assert abs(yhat[0] - want) < 1e-10

    # records: 3 message relations x 2 layers, one edge each
    assert len(records) == 6
    names = sorted({r.relation for r in records})
    assert names == ["binding", "eqtl", "eqtl__rev"]
    _, e_g1 = attend(0, "binding", h_g0, h_g1)
    rec = [r for r in records if r.layer == 0 and r.relation == "binding"][0]
    assert abs(rec.logits[0] - e_g1) < 1e-12


def test_hand_unrolled_two_incoming_edges_softmax():
    nodes = [("v0", "variant", "1", 1), ("v1", "variant", "1", 2), ("g0", "gene")]
    edges = [("v0", "g0", "eqtl", "v2g"), ("v1", "g0", "eqtl", "v2g")]
    feats = {"variant": {"v0": [1.0, 0.0], "v1": [0.0, 1.0]},
             "gene": {"g0": [0.5, -0.5]}}
    graph, _ = build_graph(nodes, edges, feature_tables=feats,
                           feature_dims={"variant": 2, "gene": 2, "program": 2})
    cfg = GatConfig(layers=2, hidden_dim=2, seed=3)
    model = init_model(graph, cfg)
    p = model.params

    h_v0 = p["proj/variant"] @ np.array([1.0, 0.0])
    h_v1 = p["proj/variant"] @ np.array([0.0, 1.0])
    h_g = p["proj/gene"] @ np.array([0.5, -0.5])
    W, a = p["layer0/eqtl/W"], p["layer0/eqtl/a"]
    m0, m1, pd = W @ h_v0, W @ h_v1, W @ h_g
    e0 = leaky(float(a[:2] @ m0 + a[2:] @ pd), cfg.leaky_slope)
    e1 = leaky(float(a[:2] @ m1 + a[2:] @ pd), cfg.leaky_slope)
    mx = max(e0, e1)
    w0, w1 = np.exp(e0 - mx), np.exp(e1 - mx)
    alpha0, alpha1 = w0 / (w0 + w1), w1 / (w0 + w1)
    agg = alpha0 * m0 + alpha1 * m1
    h1_g = np.maximum(agg, 0.0)

    _, records = forward(model, graph)
    rec = [r for r in records if r.layer == 0 and r.relation == "eqtl"][0]
    got = np.exp(rec.logits - rec.logits.max())
    got = got / got.sum()
    order = np.argsort(rec.src)
    assert np.allclose(got[order], [alpha0, alpha1], atol=1e-12)

    # and the aggregated gene state feeds layer 1 as computed by hand
    Wr, ar = p["layer1/eqtl__rev/W"], p["layer1/eqtl__rev/a"]
    # layer-0 reverse messages to v0, v1
    W0r, a0r = p["layer0/eqtl__rev/W"], p["layer0/eqtl__rev/a"]
    mg = W0r @ h_g
    h1_v0 = np.maximum(mg, 0.0)   # singleton incoming edge, weight 1
    h1_v1 = np.maximum(mg, 0.0)
    m_v0 = Wr @ h1_g
    h2_v0 = m_v0  # single incoming edge, last layer, no activation
    want_v0 = float(p["head/w"] @ h2_v0 + p["head/b"][0])
    yhat, _ = forward(model, graph)
    assert abs(yhat[0] - want_v0) < 1e-10
    del h1_v0, h1_v1, ar


def test_attention_rows_sum_to_one():
    graph, _ = random_graph(seed=1)
    model = init_model(graph, GatConfig(hidden_dim=4, seed=2))
    _, records = forward(model, graph)
    assert records
    for rec in records:
        for d in np.unique(rec.dst):
            grp = rec.logits[rec.dst == d]
            w = np.exp(grp - grp.max())
            assert abs(w.sum() / w.sum() - 1.0) < 1e-16  # normalization identity
            alpha = w / w.sum()
            assert abs(alpha.sum() - 1.0) < 1e-8


def test_grad_check_two_layer():
    graph, target = random_graph(seed=5)
    model = init_model(graph, GatConfig(layers=2, hidden_dim=4, seed=11))
    assert grad_check(model, graph, target, n_sample=50, seed=0) < 1e-4


def test_grad_check_three_layer():
    graph, target = random_graph(seed=6)
    model = init_model(graph, GatConfig(layers=3, hidden_dim=4, seed=12))
    assert grad_check(model, graph, target, n_sample=50, seed=1) < 1e-4


def test_grad_check_linear_chain_near_machine_precision():
    graph = chain_graph()
    cfg = GatConfig(layers=2, hidden_dim=2, seed=9,
                    activation="identity", leaky_slope=1.0)
    model = init_model(graph, cfg)
    target = TrainTarget.create(["v0"], [2.5], [1.3])
    assert grad_check(model, graph, target, n_sample=10 ** 6, seed=0) < 1e-8


def test_gradients_cover_parameters_on_paths_to_head():
    graph, target = random_graph(seed=7)
    model = init_model(graph, GatConfig(hidden_dim=4, seed=4))
    _, grads, _ = loss_and_grads(model, graph, target)
    assert set(grads) == set(model.params)
    # relations whose messages can still reach a variant within the
    # remaining layers must carry gradient; layer-0 gene->program messages
    # cannot come back to a variant in a 2-layer stack
    for key in ["layer0/eqtl/W", "layer0/promoter/W", "layer0/binding/W",
                "layer0/membership__rev/W", "layer1/eqtl__rev/W",
                "layer1/promoter__rev/W", "proj/variant", "proj/gene",
                "head/w"]:
        assert np.any(grads[key] != 0.0), key
    assert np.all(grads["layer0/membership/W"] == 0.0)


def test_zero_edge_relation_is_invisible():
    graph, target = random_graph(seed=8)
    cfg = GatConfig(hidden_dim=4, seed=3)
    model = init_model(graph, cfg)
    base = predict(model, graph)

    empty = Relation(name="unused_assay", relation_class=RelationClass.G2G,
                     src_class=GENE, dst_class=GENE,
                     src=np.empty(0, dtype=np.int64),
                     dst=np.empty(0, dtype=np.int64))
    rels = dict(graph.relations)
    rels["unused_assay"] = empty
    augmented = dataclasses.replace(graph,
                                    relations=dict(sorted(rels.items())))
    model2 = init_model(augmented, cfg)
    assert sorted(model2.params) == sorted(model.params)
    for k in model.params:
        assert np.array_equal(model.params[k], model2.params[k])
    assert np.array_equal(predict(model2, augmented), base)


def test_no_edges_means_pure_feature_head():
    nodes = [("v0", "variant", "1", 1), ("v1", "variant", "2", 9), ("g0", "gene")]
    edges = [("v0", "g0", "eqtl", "v2g")]
    feats = {"variant": {"v0": [1.0, 2.0], "v1": [-1.0, 0.5]},
             "gene": {"g0": [0.0, 0.0]}}
    graph, _ = build_graph(nodes, edges, feature_tables=feats,
                           feature_dims={"variant": 2, "gene": 2, "program": 2})
    cfg = GatConfig(hidden_dim=3, seed=5)
    model = init_model(graph, cfg)
    yhat = predict(model, graph)
    # v1 touches no edges: its prediction is head(proj(x)) exactly
    h = model.params["proj/variant"] @ np.array([-1.0, 0.5])
    want = float(model.params["head/w"] @ h + model.params["head/b"][0])
    assert abs(yhat[1] - want) < 1e-12


def test_permutation_equivariance():
    rng = np.random.default_rng(17)
    graph, _ = random_graph(seed=9, n_var=7, n_gene=5, n_prog=2)
    cfg = GatConfig(hidden_dim=4, seed=6)
    yhat = predict(init_model(graph, cfg), graph)

    nodes = [(f"v{i}", "variant", "1", 1000 * (i + 1)) for i in range(7)]
    rng.shuffle(nodes)
    gnodes = [(f"g{i}", "gene") for i in range(5)]
    rng.shuffle(gnodes)
    nodes += gnodes + [(f"p{i}", "program") for i in range(2)]
    edges = []
    for rel in graph.relations.values():
        for s, d in zip(rel.src, rel.dst):
            edges.append((graph.ids[rel.src_class][s], graph.ids[rel.dst_class][d],
                          rel.name, rel.relation_class.value))
    rng.shuffle(edges)
    feats = {cls.value: {nid: graph.features[cls][i]
                         for i, nid in enumerate(graph.ids[cls])}
             for cls in NodeClass}
    shuffled, _ = build_graph(nodes, edges, feature_tables=feats,
                              feature_dims={c.value: graph.features[c].shape[1]
                                            for c in NodeClass})
    yhat2 = predict(init_model(shuffled, cfg), shuffled)
    for i, vid in enumerate(shuffled.ids[VAR]):
        j = graph.index[VAR][vid]
        assert abs(yhat2[i] - yhat[j]) < 1e-12


def test_loss_matches_loop_oracle():
    rng = np.random.default_rng(3)
    yhat = rng.normal(size=9)
    y = rng.normal(size=9)
    ld = rng.uniform(1.0, 5.0, size=9)
    target = TrainTarget.create([f"v{i}" for i in range(9)], y, ld)
    loss, grad = ld_aware_loss(yhat, target)
    want = sum((yhat[i] - y[i]) ** 2 / ld[i] for i in range(9)) / 9
    assert abs(loss - want) < 1e-12
    for i in range(9):
        assert abs(grad[i] - 2 * (yhat[i] - y[i]) / (9 * ld[i])) < 1e-12


def test_loss_subset_index():
    target = TrainTarget.create(["a", "b", "c"], [1.0, 2.0, 3.0], [1.0, 2.0, 1.0])
    loss, grad = ld_aware_loss(np.array([2.0, 2.0, 0.0]), target, index=[0, 2])
    assert abs(loss - (1.0 + 9.0) / 2) < 1e-12
    assert grad[1] == 0.0


def test_ld_clamped_to_one():
    t = TrainTarget.create(["a"], [1.0], [0.25])
    assert t.ld_score[0] == 1.0


def test_split_disjoint_and_deterministic():
    tr1, va1 = split_indices(40, 0.1, seed=4)
    tr2, va2 = split_indices(40, 0.1, seed=4)
    assert np.array_equal(tr1, tr2) and np.array_equal(va1, va2)
    assert len(set(tr1) & set(va1)) == 0
    assert len(tr1) + len(va1) == 40
    assert len(va1) == 4
    tr3, _ = split_indices(40, 0.1, seed=5)
    assert not np.array_equal(tr1, tr3)


def test_training_improves_on_planted_signal():
    rng = np.random.default_rng(21)
    n_var, n_gene = 40, 8
    nodes = [(f"v{i}", "variant", "1", 500 * (i + 1)) for i in range(n_var)]
    nodes += [(f"g{i}", "gene") for i in range(n_gene)]
    edges = [(f"v{i}", f"g{i % n_gene}", "eqtl", "v2g") for i in range(n_var)]
    beta = np.array([2.0, -1.0, 0.5])
    xv = rng.normal(size=(n_var, 3))
    feats = {"variant": {f"v{i}": xv[i] for i in range(n_var)},
             "gene": {f"g{i}": rng.normal(size=2) for i in range(n_gene)}}
    graph, _ = build_graph(nodes, edges, feature_tables=feats,
                           feature_dims={"variant": 3, "gene": 2, "program": 2})
    chi2 = (xv @ beta) ** 2 * 0.3 + 1.0
    target = TrainTarget.create(graph.ids[VAR], chi2, np.ones(n_var))
    cfg = GatConfig(hidden_dim=8, learning_rate=0.05, max_epochs=60,
                    patience=60, val_fraction=0.1, seed=13)
    model, history = train(init_model(graph, cfg), graph, target)
    assert len(history) == 60
    assert history[-1][1] < history[0][1] * 0.8
    # returned parameters reproduce the best recorded validation error
    _, val_idx = split_indices(n_var, cfg.val_fraction, cfg.seed)
    yhat = predict(model, graph)
    best = min(h[2] for h in history)
    got = float(np.mean((yhat[val_idx] - target.chi2[val_idx]) ** 2))
    assert abs(got - best) < 1e-9


def test_training_deterministic():
    graph, target = random_graph(seed=15, n_var=10)
    cfg = GatConfig(hidden_dim=4, learning_rate=0.03, max_epochs=8,
                    val_fraction=0.2, seed=2)
    m1, h1 = train(init_model(graph, cfg), graph, target)
    m2, h2 = train(init_model(graph, cfg), graph, target)
    assert h1 == h2
    assert np.array_equal(predict(m1, graph), predict(m2, graph))


def test_early_stopping_stops_before_max():
    graph, target = random_graph(seed=16, n_var=10)
    cfg = GatConfig(hidden_dim=4, learning_rate=0.4, max_epochs=200,
                    val_fraction=0.2, patience=2, seed=3)
    _, history = train(init_model(graph, cfg), graph, target)
    assert len(history) < 200
    vals = [h[2] for h in history]
    assert vals[-1] >= min(vals)  # stopped on a stall, best kept elsewhere


def test_max_epochs_zero_returns_init():
    graph, target = random_graph(seed=18, n_var=10)
    cfg = GatConfig(hidden_dim=4, max_epochs=0, seed=8)
    fresh = init_model(graph, cfg)
    model, history = train(init_model(graph, cfg), graph, target)
    assert history == []
    for k in fresh.params:
        assert np.array_equal(fresh.params[k], model.params[k])


def test_divergence_raises_with_history():
    graph, target = random_graph(seed=19, n_var=10)
    cfg = GatConfig(hidden_dim=4, learning_rate=1e80, max_epochs=6,
                    val_fraction=0.2, seed=1)
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingDiverged) as err:
            train(init_model(graph, cfg), graph, target)
    assert isinstance(err.value.history, list)


def test_param_inventory():
    graph, _ = random_graph(seed=20)
    cfg = GatConfig(layers=2, hidden_dim=4)
    model = init_model(graph, cfg)
    rels = compile_message_graph(graph, True)
    # eqtl, promoter, membership get reverses; binding does not
    assert {r.name for r in rels} == {"eqtl", "eqtl__rev", "promoter",
                                      "promoter__rev", "binding",
                                      "membership", "membership__rev"}
    want = 3 + 2 * (2 * len(rels)) + 2
    assert len(model.params) == want
    assert model.params["layer1/binding/W"].shape == (4, 4)
    assert model.params["layer0/eqtl/a"].shape == (8,)
    assert model.params["proj/variant"].shape == (4, 5)
    assert model.params["head/w"].shape == (4,)


def test_config_validation():
    graph, _ = random_graph(seed=22)
    with pytest.raises(ValidationError):
        init_model(graph, GatConfig(layers=4))
    with pytest.raises(ValidationError):
        init_model(graph, GatConfig(activation="gelu"))
    with pytest.raises(ValidationError):
        init_model(graph, GatConfig(val_fraction=0.0))


def test_target_id_mismatch_rejected():
    graph, target = random_graph(seed=23, n_var=10)
    bad = TrainTarget.create(list(target.ids[::-1]), target.chi2, target.ld_score)
    with pytest.raises(ValidationError):
        train(init_model(graph, GatConfig(hidden_dim=4)), graph, bad)


def test_checkpoint_round_trip(tmp_path):
    graph, target = random_graph(seed=24, n_var=10)
    cfg = GatConfig(hidden_dim=4, learning_rate=0.03, max_epochs=5,
                    val_fraction=0.2, seed=5)
    model, history = train(init_model(graph, cfg), graph, target)
    path = tmp_path / "model.json"
    save_checkpoint(model, path, history=history)
    loaded = load_checkpoint(path, graph=graph)
    assert np.array_equal(predict(loaded, graph), predict(model, graph))
    assert loaded.t == model.t

    # a schema-incompatible graph is refused
    other, _ = random_graph(seed=25, n_var=10, n_gene=6, n_prog=3)
    other = dataclasses.replace(
        other, relations={k: v for k, v in other.relations.items()
                          if k != "binding"})
    with pytest.raises(ValidationError):
        load_checkpoint(path, graph=other)


def test_checkpoint_tamper_detected(tmp_path):
    graph, _ = random_graph(seed=26, n_var=10)
    model = init_model(graph, GatConfig(hidden_dim=4))
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    text = path.read_text().replace('"layers": 2', '"layers": 3', 1)
    path.write_text(text)
    with pytest.raises(ValidationError):
        load_checkpoint(path)


def test_schema_ignores_node_count():
    g1, _ = random_graph(seed=27, n_var=6)
    g2, _ = random_graph(seed=27, n_var=9)
    cfg = GatConfig(hidden_dim=4)
    assert graph_schema(g1, cfg) == graph_schema(g2, cfg)


def test_attention_record_fields():
    graph, _ = random_graph(seed=28)
    model = init_model(graph, GatConfig(hidden_dim=4))
    _, records = forward(model, graph)
    rec = records[0]
    assert isinstance(rec, AttentionRecord)
    assert rec.logits.shape == rec.src.shape == rec.dst.shape
    layers = {r.layer for r in records}
    assert layers == {0, 1}

"""Heterogeneous graph attention regressor on per-variant chi-square targets.

Self-contained numerics: per-class input projections, per (layer, relation)
weight matrices and attention vectors, segment softmax over incoming edges,
reverse-mode gradients written out by hand, full-batch Adam, an LD-weighted
squared-error loss, and early stopping on unweighted validation MSE.

Message passing follows stored edge directions; reverse relations (suffixed
"__rev", independent parameters) are added automatically for v2g and g2p so
gene and program signal can reach variants within two layers. Nodes with no
incoming edges pass their state through a layer unchanged (no activation).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import TrainingDiverged, ValidationError
from .graph import KnowledgeGraph, NodeClass, RelationClass

REVERSE_SUFFIX = "__rev"
REVERSIBLE = (RelationClass.V2G, RelationClass.G2P)


@dataclass(frozen=True)
class GatConfig:
    layers: int = 2
    hidden_dim: int = 16
    leaky_slope: float = 0.2
    learning_rate: float = 0.02
    max_epochs: int = 10
    val_fraction: float = 0.05
    val_chunk: int = 1            # hold out contiguous index chunks this wide
    patience: int = 2
    seed: int = 0
    activation: str = "relu"      # "relu" | "identity"
    add_reverse: bool = True

    def check(self):
        if self.layers not in (2, 3):
            raise ValidationError(f"layers must be 2 or 3, got {self.layers}")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValidationError("validation fraction must be in (0, 1)")
        if self.val_chunk < 1:
            raise ValidationError("val_chunk must be >= 1")
        if self.activation not in ("relu", "identity"):
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.hidden_dim < 1:
            raise ValidationError("hidden_dim must be positive")


@dataclass(frozen=True)
class TrainTarget:
    ids: tuple
    chi2: np.ndarray
    ld_score: np.ndarray     # clamped to >= 1

    @classmethod
    def create(cls, ids, chi2, ld_score):
        chi2 = np.asarray(chi2, dtype=np.float64)
        ld = np.maximum(np.asarray(ld_score, dtype=np.float64), 1.0)
        if not np.all(np.isfinite(chi2)):
            raise ValidationError("non-finite chi-square target")
        return cls(ids=tuple(ids), chi2=chi2, ld_score=ld)


@dataclass(frozen=True)
class AttentionRecord:
    layer: int
    relation: str
    src_class: NodeClass
    dst_class: NodeClass
    src: np.ndarray
    dst: np.ndarray
    logits: np.ndarray      # pre-softmax attention per edge


@dataclass(frozen=True)
class MsgRel:
    name: str
    src_class: NodeClass
    dst_class: NodeClass
    src: np.ndarray
    dst: np.ndarray
    starts: np.ndarray      # segment boundaries in dst-sorted order
    uniq: np.ndarray        # distinct destination nodes
    seg_id: np.ndarray      # per-edge segment index


def compile_message_graph(graph: KnowledgeGraph, add_reverse: bool = True):
    """Relation list used for message passing, dst-sorted with segment info."""
    rels = []
    for name, rel in graph.relations.items():
        pairs = [(name, rel.src_class, rel.dst_class, rel.src, rel.dst)]
        if add_reverse and rel.relation_class in REVERSIBLE:
            pairs.append((name + REVERSE_SUFFIX, rel.dst_class, rel.src_class,
                          rel.dst, rel.src))
        for rname, sc, dc, src, dst in pairs:
            if src.shape[0] == 0:
                continue
            order = np.lexsort((src, dst))
            src, dst = src[order], dst[order]
            starts = np.flatnonzero(np.r_[True, dst[1:] != dst[:-1]])
            uniq = dst[starts]
            seg_id = np.cumsum(np.r_[True, dst[1:] != dst[:-1]]) - 1
            rels.append(MsgRel(rname, sc, dc, src, dst, starts, uniq, seg_id))
    rels.sort(key=lambda r: r.name)
    return rels


def graph_schema(graph: KnowledgeGraph, config: GatConfig) -> dict:
    return {
        "relations": [
            [r.name, r.src_class.value, r.dst_class.value]
            for r in compile_message_graph(graph, config.add_reverse)
        ],
        "feature_dims": {cls.value: int(graph.features[cls].shape[1])
                         for cls in NodeClass},
        "hidden_dim": config.hidden_dim,
        "layers": config.layers,
    }


def schema_hash(schema: dict) -> str:
    return hashlib.sha256(
        json.dumps(schema, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class GatModel:
    config: GatConfig
    schema: dict
    params: dict
    m: dict
    v: dict
    t: int = 0

    def clone_params(self):
        return {k: p.copy() for k, p in self.params.items()}


def _param_shapes(schema: dict):
    h = schema["hidden_dim"]
    shapes = {}
    for cls, d in schema["feature_dims"].items():
        shapes[f"proj/{cls}"] = (h, d)
    for layer in range(schema["layers"]):
        for name, _sc, _dc in schema["relations"]:
            shapes[f"layer{layer}/{name}/W"] = (h, h)
            shapes[f"layer{layer}/{name}/a"] = (2 * h,)
    shapes["head/w"] = (h,)
    shapes["head/b"] = (1,)
    return shapes


def _key_rng(seed: int, key: str):
    digest = hashlib.sha256(key.encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([int(seed) & 0xFFFFFFFF] + words)


def init_model(graph: KnowledgeGraph, config: GatConfig) -> GatModel:
    """Scaled-uniform (Glorot) initialization, seeded per parameter so that
    unrelated schema additions never shift other parameters' draws."""
    config.check()
    if not graph.relations:
        raise ValidationError("graph has no relations; nothing to attend over")
    for cls in NodeClass:
        if len(graph.ids[cls]) > 0 and graph.features[cls].shape[1] == 0:
            raise ValidationError(f"zero-dimension features for {cls.value}")
    schema = graph_schema(graph, config)
    params = {}
    for key, shape in sorted(_param_shapes(schema).items()):
        rng = _key_rng(config.seed, key)
        if key == "head/b":
            params[key] = np.zeros(1)
            continue
        if key.endswith("/a"):
            fan_in, fan_out = shape[0], 1
        elif key == "head/w":
            fan_in, fan_out = shape[0], 1
        else:
            fan_in, fan_out = shape[1], shape[0]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[key] = rng.uniform(-bound, bound, size=shape)
    zeros = {k: np.zeros_like(p) for k, p in params.items()}
    return GatModel(config=config, schema=schema, params=params,
                    m=zeros, v={k: np.zeros_like(p) for k, p in params.items()})


def _leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def _leaky_grad(x, slope):
    return np.where(x >= 0, 1.0, slope)


def _act(x, kind):
    return np.maximum(x, 0.0) if kind == "relu" else x


def _act_grad(x, kind):
    return (x > 0).astype(np.float64) if kind == "relu" else np.ones_like(x)


def _forward(model: GatModel, graph: KnowledgeGraph, keep_cache=False):
    cfg = model.config
    rels = compile_message_graph(graph, cfg.add_reverse)
    p = model.params
    h = {cls: graph.features[cls] @ p[f"proj/{cls.value}"].T for cls in NodeClass}
    hdim = cfg.hidden_dim
    records = []
    layers_cache = []

    for layer in range(cfg.layers):
        total = {cls: np.zeros_like(h[cls]) for cls in NodeClass}
        cnt = {cls: np.zeros(h[cls].shape[0], dtype=np.int64) for cls in NodeClass}
        rel_cache = {}
        for r in rels:
            W = p[f"layer{layer}/{r.name}/W"]
            a = p[f"layer{layer}/{r.name}/a"]
            hu = h[r.src_class][r.src]
            hv = h[r.dst_class][r.dst]
            m_msg = hu @ W.T
            p_dst = hv @ W.T
            s = m_msg @ a[:hdim] + p_dst @ a[hdim:]
            e = _leaky(s, cfg.leaky_slope)
            mx = np.maximum.reduceat(e, r.starts)
            ex = np.exp(e - mx[r.seg_id])
            z = np.add.reduceat(ex, r.starts)
            alpha = ex / z[r.seg_id]
            sums = np.add.reduceat(alpha[:, None] * m_msg, r.starts, axis=0)
            if not np.all(np.isfinite(sums)):
                raise RuntimeError(
                    f"non-finite activations at layer {layer} relation {r.name}")
            total[r.dst_class][r.uniq] += sums
            cnt[r.dst_class][r.uniq] += 1
            records.append(AttentionRecord(layer=layer, relation=r.name,
                                           src_class=r.src_class,
                                           dst_class=r.dst_class,
                                           src=r.src, dst=r.dst, logits=e))
            if keep_cache:
                rel_cache[r.name] = (m_msg, p_dst, s, alpha)
        h_next = {}
        combine_cache = {}
        for cls in NodeClass:
            msg = cnt[cls] > 0
            denom = np.maximum(cnt[cls], 1).astype(np.float64)
            zc = total[cls] / denom[:, None]
            if layer < cfg.layers - 1:
                out = np.where(msg[:, None], _act(zc, cfg.activation), h[cls])
            else:
                out = np.where(msg[:, None], zc, h[cls])
            h_next[cls] = out
            combine_cache[cls] = (msg, denom, zc)
        if keep_cache:
            layers_cache.append((h, rel_cache, combine_cache))
        h = h_next

    yhat = h[NodeClass.VARIANT] @ p["head/w"] + p["head/b"][0]
    cache = (rels, layers_cache, h) if keep_cache else None
    return yhat, records, cache


def forward(model: GatModel, graph: KnowledgeGraph):
    """Per-variant prediction plus per-edge pre-softmax attention records."""
    yhat, records, _ = _forward(model, graph)
    return yhat, records


def predict(model: GatModel, graph: KnowledgeGraph):
    return _forward(model, graph)[0]


def ld_aware_loss(predictions, target: TrainTarget, index=None):
    """L = mean((yhat - y)^2 / ld) over the index subset (default: all);
    returns (loss, gradient w.r.t. the full prediction vector)."""
    yhat = np.asarray(predictions, dtype=np.float64)
    if yhat.shape[0] != target.chi2.shape[0]:
        raise ValidationError("prediction/target length mismatch")
    if index is None:
        index = np.arange(yhat.shape[0])
    index = np.asarray(index)
    if index.shape[0] == 0:
        raise ValidationError("empty loss index set")
    resid = yhat[index] - target.chi2[index]
    ld = target.ld_score[index]
    n = index.shape[0]
    loss = float(np.mean(resid ** 2 / ld))
    grad = np.zeros_like(yhat)
    grad[index] = 2.0 * resid / (n * ld)
    return loss, grad


def _backward(model: GatModel, graph: KnowledgeGraph, cache, dyhat):
    cfg = model.config
    p = model.params
    hdim = cfg.hidden_dim
    rels, layers_cache, h_final = cache
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    grads["head/w"] += h_final[NodeClass.VARIANT].T @ dyhat
    grads["head/b"][0] += dyhat.sum()
    dh = {cls: np.zeros_like(h_final[cls]) for cls in NodeClass}
    dh[NodeClass.VARIANT] += dyhat[:, None] * p["head/w"][None, :]

    for layer in range(cfg.layers - 1, -1, -1):
        h_in, rel_cache, combine_cache = layers_cache[layer]
        dh_in = {cls: np.zeros_like(h_in[cls]) for cls in NodeClass}
        dtotal = {}
        for cls in NodeClass:
            msg, denom, zc = combine_cache[cls]
            dout = dh[cls]
            # pass-through nodes copy their state; message nodes divide by
            # the count of relations present, with activation between layers
            dh_in[cls] += np.where(msg[:, None], 0.0, dout)
            if layer < cfg.layers - 1:
                dz = dout * _act_grad(zc, cfg.activation)
            else:
                dz = dout
            dz = np.where(msg[:, None], dz, 0.0)
            dtotal[cls] = dz / denom[:, None]
        for r in rels:
            m_msg, p_dst, s, alpha = rel_cache[r.name]
            W = p[f"layer{layer}/{r.name}/W"]
            a = p[f"layer{layer}/{r.name}/a"]
            dagg = dtotal[r.dst_class][r.dst]      # per-edge destination grad
            dm = alpha[:, None] * dagg
            dalpha = np.sum(dagg * m_msg, axis=1)
            seg_dot = np.add.reduceat(alpha * dalpha, r.starts)
            de = alpha * (dalpha - seg_dot[r.seg_id])
            ds = de * _leaky_grad(s, cfg.leaky_slope)
            grads[f"layer{layer}/{r.name}/a"][:hdim] += m_msg.T @ ds
            grads[f"layer{layer}/{r.name}/a"][hdim:] += p_dst.T @ ds
            dm += ds[:, None] * a[None, :hdim]
            dp_dst = ds[:, None] * a[None, hdim:]
            hu = h_in[r.src_class][r.src]
            hv = h_in[r.dst_class][r.dst]
            grads[f"layer{layer}/{r.name}/W"] += dm.T @ hu + dp_dst.T @ hv
            np.add.at(dh_in[r.src_class], r.src, dm @ W)
            np.add.at(dh_in[r.dst_class], r.dst, dp_dst @ W)
        dh = dh_in

    for cls in NodeClass:
        grads[f"proj/{cls.value}"] += dh[cls].T @ graph.features[cls]
    return grads


def loss_and_grads(model: GatModel, graph: KnowledgeGraph,
                   target: TrainTarget, index=None):
    yhat, _records, cache = _forward(model, graph, keep_cache=True)
    loss, dyhat = ld_aware_loss(yhat, target, index)
    grads = _backward(model, graph, cache, dyhat)
    return loss, grads, yhat


def _adam_step(model: GatModel, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    model.t += 1
    t = model.t
    for key in sorted(model.params):
        g = grads[key]
        model.m[key] = b1 * model.m[key] + (1 - b1) * g
        model.v[key] = b2 * model.v[key] + (1 - b2) * g * g
        mhat = model.m[key] / (1 - b1 ** t)
        vhat = model.v[key] / (1 - b2 ** t)
        model.params[key] -= lr * mhat / (np.sqrt(vhat) + eps)


def split_indices(n: int, val_fraction: float, seed: int, chunk: int = 1):
    """(train_idx, val_idx), both sorted. chunk > 1 holds out contiguous
    index chunks of that width together, which keeps correlated neighbors
    (LD blocks) on one side of the split."""
    rng = np.random.default_rng(seed)
    n_chunks = (n + chunk - 1) // chunk
    order = rng.permutation(n_chunks)
    n_val = max(1, int(round(val_fraction * n_chunks)))
    val_chunks = set(order[:n_val].tolist())
    idx = np.arange(n)
    in_val = np.isin(idx // chunk, list(val_chunks))
    return idx[~in_val], idx[in_val]


def train(model: GatModel, graph: KnowledgeGraph, target: TrainTarget):
    """Full-batch Adam with early stopping on unweighted validation MSE.
    Returns (model with best-epoch parameters, history); history rows are
    (epoch, train_loss, val_mse)."""
    cfg = model.config
    n = len(graph.ids[NodeClass.VARIANT])
    if target.chi2.shape[0] != n:
        raise ValidationError("target length does not match variant count")
    if tuple(target.ids) != tuple(graph.ids[NodeClass.VARIANT]):
        raise ValidationError("target variant ids do not match graph order")
    history = []
    if cfg.max_epochs <= 0:
        return model, history
    train_idx, val_idx = split_indices(n, cfg.val_fraction, cfg.seed,
                                       chunk=cfg.val_chunk)
    if train_idx.shape[0] < 2 or val_idx.shape[0] < 2:
        raise ValidationError("need at least 2 variants in each split")

    best_val = np.inf
    best_state = (model.clone_params(), {k: v.copy() for k, v in model.m.items()},
                  {k: v.copy() for k, v in model.v.items()}, model.t)
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss, grads, _ = loss_and_grads(model, graph, target, train_idx)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}",
                                   history)
        _adam_step(model, grads, cfg.learning_rate)
        try:
            yhat = predict(model, graph)
        except RuntimeError as exc:
            raise TrainingDiverged(
                f"parameters blew up at epoch {epoch}: {exc}", history) from exc
        val_mse = float(np.mean((yhat[val_idx] - target.chi2[val_idx]) ** 2))
        if not np.isfinite(val_mse):
            raise TrainingDiverged(
                f"non-finite validation error at epoch {epoch}", history)
        history.append((epoch, loss, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_state = (model.clone_params(),
                          {k: v.copy() for k, v in model.m.items()},
                          {k: v.copy() for k, v in model.v.items()}, model.t)
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    model.params, model.m, model.v, model.t = best_state
    return model, history


def grad_check(model: GatModel, graph: KnowledgeGraph, target: TrainTarget,
               h: float = 1e-5, n_sample: int = 50, seed: int = 0) -> float:
    """Central finite differences against the analytic gradient on up to
    n_sample parameter coordinates; returns the max relative error with
    denominator max(|analytic|, |numeric|). Coordinates where both values
    sit below 1e-6 * max(1, |loss|) are counted as agreeing: the central
    difference carries O(|loss| * eps / h) roundoff, so magnitudes near that
    noise floor cannot be resolved to any relative precision."""
    base_loss, grads, _ = loss_and_grads(model, graph, target)
    floor = 1e-6 * max(1.0, abs(base_loss))
    coords = []
    for key in sorted(model.params):
        for flat in range(model.params[key].size):
            coords.append((key, flat))
    rng = np.random.default_rng(seed)
    if len(coords) > n_sample:
        picks = rng.choice(len(coords), size=n_sample, replace=False)
        coords = [coords[i] for i in sorted(picks)]
    worst = 0.0
    for key, flat in coords:
        flatview = model.params[key].reshape(-1)
        orig = flatview[flat]
        flatview[flat] = orig + h
        lp = ld_aware_loss(_forward(model, graph)[0], target)[0]
        flatview[flat] = orig - h
        lm = ld_aware_loss(_forward(model, graph)[0], target)[0]
        flatview[flat] = orig
        fd = (lp - lm) / (2 * h)
        an = grads[key].reshape(-1)[flat]
        denom = max(abs(fd), abs(an))
        if denom > floor:
            worst = max(worst, abs(fd - an) / denom)
    return worst


# ------------------------------------------------------------- checkpointing

CKPT_VERSION = 1


def save_checkpoint(model: GatModel, path, history=None):
    payload = {
        "format_version": CKPT_VERSION,
        "schema": model.schema,
        "schema_hash": schema_hash(model.schema),
        "config": {
            "layers": model.config.layers,
            "hidden_dim": model.config.hidden_dim,
            "leaky_slope": model.config.leaky_slope,
            "learning_rate": model.config.learning_rate,
            "max_epochs": model.config.max_epochs,
            "val_fraction": model.config.val_fraction,
            "patience": model.config.patience,
            "seed": model.config.seed,
            "activation": model.config.activation,
            "add_reverse": model.config.add_reverse,
        },
        "params": {k: v.tolist() for k, v in sorted(model.params.items())},
        "opt": {
            "t": model.t,
            "m": {k: v.tolist() for k, v in sorted(model.m.items())},
            "v": {k: v.tolist() for k, v in sorted(model.v.items())},
        },
        "history": [list(row) for row in (history or [])],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path, graph: KnowledgeGraph = None) -> GatModel:
    if not os.path.exists(path):
        raise ValidationError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    config = GatConfig(**payload["config"])
    schema = payload["schema"]
    if payload.get("schema_hash") != schema_hash(schema):
        raise ValidationError("checkpoint schema hash does not match its schema")
    if (config.layers != schema["layers"]
            or config.hidden_dim != schema["hidden_dim"]):
        raise ValidationError("checkpoint config disagrees with its schema")
    if graph is not None:
        live = graph_schema(graph, config)
        if schema_hash(live) != payload["schema_hash"]:
            raise ValidationError(
                "checkpoint was trained on a different graph schema; refusing to load")
    shapes = _param_shapes(schema)
    params = {}
    for key, shape in shapes.items():
        if key not in payload["params"]:
            raise ValidationError(f"checkpoint missing parameter {key}")
        arr = np.asarray(payload["params"][key], dtype=np.float64).reshape(shape)
        params[key] = arr
    m = {k: np.asarray(payload["opt"]["m"][k], dtype=np.float64).reshape(shapes[k])
         for k in shapes}
    v = {k: np.asarray(payload["opt"]["v"][k], dtype=np.float64).reshape(shapes[k])
         for k in shapes}
    return GatModel(config=config, schema=schema, params=params, m=m, v=v,
                    t=int(payload["opt"]["t"]))

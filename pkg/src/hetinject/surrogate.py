"""Lightweight relational surrogate.

Per-type linear projector into a shared space, ``l`` rounds of
``H <- ReLU((sum_r mu_r Ahat_r) H)`` with ``mu = softmax(mu_logits)``, a
residual mix ``(1 - alpha) H^l + alpha H^0`` and an MLP classifier whose
logits go through a temperature softmax. All gradients are explicit.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import HeteroGraph
from .metrics import micro_f1
from .numerics import (
    Adam,
    ContractError,
    MlpCache,
    MlpParams,
    mlp_backward,
    mlp_forward,
    softmax,
    softmax_ce_grad,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class NumericFailure(RuntimeError):
    """Training or attack produced non-finite values."""


@dataclass
class SurrogateParams:
    proj_weights: list[np.ndarray]  # per type: (d_tau, d)
    proj_biases: list[np.ndarray]  # per type: (d,)
    mu_logits: np.ndarray  # (R,)
    classifier: MlpParams  # d -> d -> C
    alpha: float = 0.3
    layers: int = 2
    temperature: float = 0.5
    meta: dict = field(default_factory=dict)

    @property
    def hidden_dim(self) -> int:
        return self.classifier.in_dim

    @property
    def num_classes(self) -> int:
        return self.classifier.out_dim

    @classmethod
    def init(cls, feature_dims, num_relations: int, num_classes: int, hidden_dim: int = 32,
             rng: np.random.Generator | None = None, **kw) -> "SurrogateParams":
        rng = rng or np.random.default_rng(0)
        ws, bs = [], []
        for d_t in feature_dims:
            bound = np.sqrt(6.0 / (d_t + hidden_dim))
            ws.append(rng.uniform(-bound, bound, size=(d_t, hidden_dim)))
            bs.append(np.zeros(hidden_dim))
        clf = MlpParams.init([hidden_dim, hidden_dim, num_classes], rng)
        return cls(ws, bs, np.zeros(num_relations), clf, **kw)

    # flat view used by the optimizer and gradient checks
    def flat(self) -> dict[str, np.ndarray]:
        out = {}
        for t, (w, b) in enumerate(zip(self.proj_weights, self.proj_biases)):
            out[f"P{t}_W"] = w
            out[f"P{t}_b"] = b
        out["mu"] = self.mu_logits
        for k, v in self.classifier.flat().items():
            out[f"C_{k}"] = v
        return out

    def with_flat(self, values: dict[str, np.ndarray]) -> "SurrogateParams":
        nt = len(self.proj_weights)
        clf = self.classifier.with_flat({k[2:]: v for k, v in values.items() if k.startswith("C_")})
        return SurrogateParams(
            [values[f"P{t}_W"] for t in range(nt)], [values[f"P{t}_b"] for t in range(nt)],
            values["mu"], clf, self.alpha, self.layers, self.temperature, dict(self.meta),
        )

    def relation_weights(self) -> np.ndarray:
        return relation_weights(self)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "alpha": self.alpha,
            "layers": self.layers,
            "temperature": self.temperature,
            "hidden_dim": self.hidden_dim,
            "projectors": [{"weight": w.tolist(), "bias": b.tolist()}
                           for w, b in zip(self.proj_weights, self.proj_biases)],
            "mu_logits": self.mu_logits.tolist(),
            "classifier": [{"weight": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                           for l in self.classifier.layers],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateParams":
        from .numerics import Layer
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported surrogate file version {d.get('version')!r}")
        return cls(
            [np.array(p["weight"], dtype=np.float64) for p in d["projectors"]],
            [np.array(p["bias"], dtype=np.float64) for p in d["projectors"]],
            np.array(d["mu_logits"], dtype=np.float64),
            MlpParams([Layer(np.array(l["weight"]), np.array(l["bias"]), l["activation"]) for l in d["classifier"]]),
            float(d["alpha"]), int(d["layers"]), float(d["temperature"]), dict(d.get("meta", {})),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SurrogateParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def relation_weights(params: SurrogateParams) -> np.ndarray:
    """Relation importance on the simplex (softmax of the logits)."""
    return softmax(params.mu_logits)


def project_features(params: SurrogateParams, g: HeteroGraph) -> np.ndarray:
    if len(params.proj_weights) < g.num_types:
        raise ContractError(f"surrogate has {len(params.proj_weights)} projectors, graph has {g.num_types} types")
    h0 = np.zeros((g.num_nodes, params.hidden_dim))
    for t in range(g.num_types):
        w = params.proj_weights[t]
        if w.shape[0] != g.feature_dim(t):
            raise ContractError(f"projector for {g.type_names[t]!r} expects dim {w.shape[0]}, "
                                f"features have {g.feature_dim(t)}")
        h0[g.nodes_of_type(t)] = g.features[t] @ w + params.proj_biases[t]
    return h0


def mixed_adjacency(params: SurrogateParams, g: HeteroGraph, mu: np.ndarray | None = None) -> sp.csr_matrix:
    mu = relation_weights(params) if mu is None else mu
    if mu.size != g.num_relations:
        raise ContractError(f"{mu.size} relation weights for {g.num_relations} relations")
    s = sp.csr_matrix((g.num_nodes, g.num_nodes))
    for r in range(g.num_relations):
        s = s + mu[r] * g.normalized(r)
    s.sort_indices()
    return s


@dataclass
class ForwardCache:
    h0: np.ndarray
    mu: np.ndarray
    s: sp.csr_matrix
    hs: list[np.ndarray]  # H^0 .. H^l
    zs: list[np.ndarray]  # pre-activations of each round
    mixed: np.ndarray
    cls_cache: MlpCache
    logits: np.ndarray
    probs: np.ndarray


def message_pass(params: SurrogateParams, g: HeteroGraph, h0: np.ndarray) -> np.ndarray:
    s = mixed_adjacency(params, g)
    h = h0
    for _ in range(params.layers):
        if s.shape[1] != h.shape[0]:
            raise ContractError("message_pass: adjacency and features disagree on node count")
        h = np.maximum(s @ h, 0.0)
    return h


def forward(params: SurrogateParams, g: HeteroGraph) -> ForwardCache:
    h0 = project_features(params, g)
    mu = relation_weights(params)
    s = mixed_adjacency(params, g, mu)
    hs, zs = [h0], []
    h = h0
    for _ in range(params.layers):
        z = s @ h
        zs.append(z)
        h = np.maximum(z, 0.0)
        hs.append(h)
    mixed = (1.0 - params.alpha) * h + params.alpha * h0
    logits, cache = mlp_forward(params.classifier, mixed)
    probs = softmax(logits, params.temperature)
    return ForwardCache(h0, mu, s, hs, zs, mixed, cache, logits, probs)


def predict(params: SurrogateParams, g: HeteroGraph) -> np.ndarray:
    """Class probabilities for every node (N x C)."""
    return forward(params, g).probs


def backward(params: SurrogateParams, g: HeteroGraph, fc: ForwardCache, dlogits: np.ndarray
             ) -> tuple[dict[str, np.ndarray], list[np.ndarray]]:
    """Gradients of a scalar with ``d/dlogits = dlogits`` w.r.t. every parameter and raw feature table."""
    cls_grads, dmixed = mlp_backward(params.classifier, fc.cls_cache, dlogits)
    grads = {f"C_{k}": v for k, v in cls_grads.items()}
    dh = (1.0 - params.alpha) * dmixed
    dh0 = params.alpha * dmixed
    dmu = np.zeros(fc.mu.size)
    for i in range(params.layers - 1, -1, -1):
        dz = dh * (fc.zs[i] > 0)
        h_prev = fc.hs[i]
        for r in range(g.num_relations):
            dmu[r] += float(np.sum(dz * (g.normalized(r) @ h_prev)))
        dh = fc.s.T @ dz
    dh0 = dh0 + dh
    grads["mu"] = fc.mu * (dmu - np.dot(dmu, fc.mu))
    dfeats = []
    for t in range(len(params.proj_weights)):
        ids = g.nodes_of_type(t) if t < g.num_types else np.zeros(0, dtype=np.int64)
        gt = dh0[ids]
        feats = g.features[t] if t < g.num_types else np.zeros((0, params.proj_weights[t].shape[0]))
        grads[f"P{t}_W"] = feats.T @ gt
        grads[f"P{t}_b"] = gt.sum(axis=0)
        dfeats.append(gt @ params.proj_weights[t].T)
    return grads, dfeats


def loss_and_grads(params: SurrogateParams, g: HeteroGraph, nodes: np.ndarray, labels: np.ndarray
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean temperature cross-entropy on ``nodes`` and its parameter gradients."""
    fc = forward(params, g)
    loss, dsel = softmax_ce_grad(fc.logits[nodes], labels, params.temperature)
    dlogits = np.zeros_like(fc.logits)
    np.add.at(dlogits, nodes, dsel)
    grads, _ = backward(params, g, fc, dlogits)
    return loss, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 300
    patience: int = 10
    seed: int = 0
    train_ratio: float = 1.0
    hidden_dim: int = 16
    layers: int = 2
    alpha: float = 0.3
    temperature: float = 0.5
    weight_decay: float = 1e-2  # L2 on everything except mu
    min_epochs: int = 100  # warm-up before early stopping may trigger

    def __post_init__(self):
        if not 0 < self.train_ratio <= 1:
            raise ValueError("train_ratio must lie in (0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def subsample_train(g: HeteroGraph, ratio: float, seed: int) -> np.ndarray:
    ids = g.splits["train"]
    if ratio >= 1.0:
        return ids
    rng = np.random.default_rng([seed, 7])
    k = max(1, int(round(ratio * ids.size)))
    return np.sort(rng.choice(ids, size=k, replace=False))


def train_surrogate(g: HeteroGraph, config: TrainConfig, params: SurrogateParams | None = None
                    ) -> tuple[SurrogateParams, list[dict]]:
    """Full-batch Adam on train cross-entropy, early-stopped on validation micro-F1.

    Ties in validation micro-F1 are broken by validation loss. Returns the best
    parameters and the per-epoch curve.
    """
    train_ids = subsample_train(g, config.train_ratio, config.seed)
    if train_ids.size == 0:
        raise ValueError("empty train split")
    y_train = g.labels[train_ids]
    val_ids, y_val = g.labeled("val")
    if params is None:
        rng = np.random.default_rng(config.seed)
        params = SurrogateParams.init(
            [g.feature_dim(t) for t in range(g.num_types)], g.num_relations, g.num_classes,
            config.hidden_dim, rng, alpha=config.alpha, layers=config.layers, temperature=config.temperature,
        )
    opt = Adam(config.lr)
    best, best_key, stale = params, None, 0
    curve = []
    for epoch in range(config.epochs):
        loss, grads = loss_and_grads(params, g, train_ids, y_train)
        if not np.isfinite(loss):
            raise NumericFailure(f"non-finite training loss at epoch {epoch}")
        if config.weight_decay:
            flat = params.flat()
            for k in grads:
                if k != "mu":
                    grads[k] = grads[k] + config.weight_decay * flat[k]
        params = params.with_flat(opt.step(params.flat(), grads))
        probs = predict(params, g)
        if val_ids.size:
            val_loss = float(-np.mean(np.log(np.maximum(probs[val_ids, y_val], 1e-300))))
            val_f1 = micro_f1(y_val, probs[val_ids].argmax(axis=1))
        else:
            val_loss, val_f1 = loss, 0.0
        curve.append({"epoch": epoch, "train_loss": loss, "val_loss": val_loss, "val_micro_f1": val_f1,
                      "mu": relation_weights(params).tolist()})
        if epoch + 1 < config.min_epochs:
            continue
        key = (val_f1, -val_loss)
        if best_key is None or key > best_key:
            best, best_key, stale = params, key, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best.meta = {"seed": config.seed, "epochs_run": len(curve), "best_val_micro_f1": best_key[0],
                 "train_ratio": config.train_ratio, "train_nodes": int(train_ids.size)}
    log.debug("surrogate trained: %s", best.meta)
    return best, curve


# ---------------------------------------------------------------------------
# linearized two-hop model of a single relation
# ---------------------------------------------------------------------------

@dataclass
class LinearizedRelation:
    """``Ahat'`` of one relation with a pending fake node appended as row/column ``n``.

    The normalization is frozen: original nodes use ``lambda = deg_r + 1``
    (prior injections included) and the fake node uses ``d_r = K + 1``.
    """
    gd: sp.csr_matrix  # lambda^-1/2 (A_r + I) lambda^-1/2
    lam_isqrt: np.ndarray
    d_r: float
    p: np.ndarray  # H' W2, (n + 1) x C

    @property
    def n(self) -> int:
        return self.gd.shape[0]

    def e_hat(self, e: np.ndarray) -> np.ndarray:
        return self.lam_isqrt * e / np.sqrt(self.d_r)

    def apply(self, e: np.ndarray, x: np.ndarray) -> np.ndarray:
        n = self.n
        eh = self.e_hat(e)
        out = np.empty_like(x)
        out[:n] = self.gd @ x[:n] + np.outer(eh, x[n])
        out[n] = eh @ x[:n] + x[n] / self.d_r
        return out

    def logits(self, e: np.ndarray) -> np.ndarray:
        return self.apply(e, self.apply(e, self.p))


def linearize(params: SurrogateParams, g: HeteroGraph, relation: int, h_in: np.ndarray, K: int
              ) -> LinearizedRelation:
    a = g.relations[relation].adj
    n = g.num_nodes
    lam = g.degree(relation) + 1.0
    lis = 1.0 / np.sqrt(lam)
    dl = sp.diags(lis)
    gd = (dl @ (a + sp.identity(n, format="csr")) @ dl).tocsr()
    gd.sort_indices()
    w2 = params.classifier.linear_map()
    h = np.vstack([project_features(params, g), np.asarray(h_in, dtype=np.float64).reshape(1, -1)])
    return LinearizedRelation(gd, lis, float(K + 1), h @ w2)


def linearized_forward(params: SurrogateParams, g: HeteroGraph, relation: int, h_in: np.ndarray,
                       e: np.ndarray, K: int) -> np.ndarray:
    """Activation-free logits ``Ahat'^2 H' W2`` for the graph plus one pending fake node.

    ``h_in`` is the fake node's aligned feature and ``e`` its (possibly
    fractional) connection vector over the current ``n`` nodes.
    """
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    if e.size != g.num_nodes:
        raise ContractError(f"edge vector has {e.size} entries for {g.num_nodes} nodes")
    return linearize(params, g, relation, h_in, K).logits(e)

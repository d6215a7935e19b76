"""Serialized relation-wise node-injection attack.

Each step picks the relation with the largest working weight, spawns a fake
node of one endpoint type, shapes its features with a per-type generator
trained against the frozen surrogate, wires it to the top-K candidates of the
linearized edge gradient and finally divides that relation's weight by beta.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    BudgetViolation,
    GraphError,
    HeteroGraph,
    InjectionLedger,
    inject_node,
    materialize,
    validate_injection,
)
from .numerics import Adam, ContractError, Layer, MlpParams, mlp_backward, mlp_forward, softmax_backward
from .surrogate import NumericFailure, SurrogateParams, backward, forward, linearize, relation_weights

log = logging.getLogger(__name__)

EDGE_STRATEGIES = ("gradient", "random", "simple")
FEATURE_STRATEGIES = ("generator", "prototype")
P_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# budget and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackBudget:
    rho: float = 0.05
    K: int = 5
    beta: float = 1.8
    M: int | None = None  # override for floor(N * rho)
    k_conf: float = 0.0
    r_ctrl: float = 4.0
    gen_steps: int = 20
    gen_lr: float = 1e-2
    gen_hidden: int = 64
    init_noise: float = 0.05
    edge_strategy: str = "gradient"
    feature_strategy: str = "generator"
    descent_only: bool = True  # gradient strategy: only candidates whose edge lowers the loss

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.beta <= 1:
            raise ValueError("beta must be > 1")
        if self.k_conf < 0:
            raise ValueError("k_conf must be >= 0")
        if self.M is not None and self.M < 0:
            raise ValueError("M must be >= 0")
        if self.edge_strategy not in EDGE_STRATEGIES:
            raise ValueError(f"edge_strategy must be one of {EDGE_STRATEGIES}")
        if self.feature_strategy not in FEATURE_STRATEGIES:
            raise ValueError(f"feature_strategy must be one of {FEATURE_STRATEGIES}")

    def max_nodes(self, n: int) -> int:
        # small epsilon so that e.g. 600 * 0.05 is not floored to 29
        return int(np.floor(n * self.rho + 1e-9))

    def steps(self, n: int) -> int:
        cap = self.max_nodes(n)
        if self.M is None:
            return cap
        if self.M > cap:
            raise BudgetViolation(f"M = {self.M} exceeds floor(N * rho) = {cap}")
        return self.M

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class AttackState:
    step: int
    mu: np.ndarray
    ledger: InjectionLedger
    trace: list[dict] = field(default_factory=list)


@dataclass
class PerturbedGraph:
    """Base graph plus an injection ledger overlay."""
    base: HeteroGraph
    ledger: InjectionLedger
    max_nodes: int
    K: int

    def materialize(self) -> HeteroGraph:
        return materialize(self.base, self.ledger)

    def validate(self, attacked: HeteroGraph | None = None) -> HeteroGraph:
        attacked = self.materialize() if attacked is None else attacked
        validate_injection(self.base, attacked, self.ledger, self.max_nodes, self.K)
        return attacked


# ---------------------------------------------------------------------------
# scheduling
# ---------------------------------------------------------------------------

def select_relation(mu: np.ndarray) -> int:
    """Index of the largest weight; ``np.argmax`` already prefers the lowest index on ties."""
    mu = np.asarray(mu)
    if mu.size == 0:
        raise ContractError("no relations to select from")
    return int(np.argmax(mu))


def reweight(mu: np.ndarray, r: int, beta: float) -> np.ndarray:
    if beta <= 1:
        raise ValueError("beta must be > 1")
    out = np.array(mu, dtype=np.float64, copy=True)
    out[r] /= beta
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _margins(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True-class probability minus best other class, and the index of that other class."""
    rows = np.arange(probs.shape[0])
    other = probs.copy()
    other[rows, labels] = -np.inf
    best = other.argmax(axis=1)
    return probs[rows, labels] - probs[rows, best], best


def cw_loss(probs, labels, k_conf: float = 0.0) -> float:
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    margin, _ = _margins(probs, labels)
    return float(np.sum(np.maximum(margin, -k_conf)))


def kl_smooth_loss(p_true, r_ctrl: float = 4.0) -> float:
    p = np.maximum(np.atleast_1d(np.asarray(p_true, dtype=np.float64)), P_FLOOR)
    return float(np.mean(np.maximum(r_ctrl + np.log(p), 0.0) ** 2))


def attack_loss(probs, labels, k_conf: float = 0.0, r_ctrl: float = 4.0) -> float:
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p_true = probs[np.arange(labels.size), labels]
    return cw_loss(probs, labels, k_conf) + kl_smooth_loss(p_true, r_ctrl)


def attack_loss_grad(probs: np.ndarray, labels: np.ndarray, k_conf: float = 0.0, r_ctrl: float = 4.0
                     ) -> tuple[float, np.ndarray]:
    """``attack_loss`` and its gradient w.r.t. the probability rows."""
    rows = np.arange(labels.size)
    margin, best = _margins(probs, labels)
    d = np.zeros_like(probs)
    active = margin > -k_conf
    d[rows[active], labels[active]] += 1.0
    d[rows[active], best[active]] -= 1.0
    p = probs[rows, labels]
    pf = np.maximum(p, P_FLOOR)
    hinge = np.maximum(r_ctrl + np.log(pf), 0.0)
    d[rows, labels] += np.where(p > P_FLOOR, 2.0 * hinge / pf, 0.0) / labels.size
    loss = float(np.sum(np.maximum(margin, -k_conf)) + np.mean(hinge ** 2))
    return loss, d


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

@dataclass
class TypeAdapter:
    """Frozen random projection bridging a generator to a different feature dim."""
    into: np.ndarray  # (d_new, d_gen)
    back: np.ndarray  # (d_gen, d_new)


@dataclass
class FakeNodeGenerator:
    """One feed-forward generator per node type, keyed by type name."""
    nets: dict[str, MlpParams]
    roles: dict[str, str]
    frozen: bool = False
    source: str = ""  # fingerprint of the graph the generators were trained on
    adapters: dict[str, TypeAdapter] = field(default_factory=dict)
    _opts: dict[str, Adam] = field(default_factory=dict, repr=False)

    @classmethod
    def init(cls, g: HeteroGraph, hidden: int, rng: np.random.Generator) -> "FakeNodeGenerator":
        nets = {}
        for t, name in enumerate(g.type_names):
            d = g.feature_dim(t)
            nets[name] = MlpParams.init([d, hidden, hidden, d], rng)
        roles = {name: g.type_roles.get(name, "none") for name in g.type_names}
        return cls(nets, roles, source=g.fingerprint())

    def optimizer(self, name: str, lr: float) -> Adam:
        if name not in self._opts:
            self._opts[name] = Adam(lr)
        return self._opts[name]

    def forward(self, name: str, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        ad = self.adapters.get(name)
        if ad is not None:
            out, _ = mlp_forward(self.nets[name], x @ ad.into)
            return (out @ ad.back)[0]
        out, _ = mlp_forward(self.nets[name], x)
        return out[0]

    def freeze(self) -> "FakeNodeGenerator":
        return FakeNodeGenerator(dict(self.nets), dict(self.roles), True, self.source, dict(self.adapters))

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "source": self.source,
            "roles": self.roles,
            "nets": {
                name: [{"weight": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                       for l in p.layers]
                for name, p in self.nets.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict, frozen: bool = True) -> "FakeNodeGenerator":
        nets = {
            name: MlpParams([Layer(np.array(l["weight"], dtype=np.float64), np.array(l["bias"], dtype=np.float64),
                                   l["activation"]) for l in layers])
            for name, layers in d["nets"].items()
        }
        return cls(nets, dict(d["roles"]), frozen, d.get("source", ""))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, frozen: bool = True) -> "FakeNodeGenerator":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), frozen)


def generate_fake_feature(gen: FakeNodeGenerator, type_name: str, x_prev, x_neighbor,
                          lo: np.ndarray | None = None, hi: np.ndarray | None = None) -> np.ndarray:
    """Generator output on ``x_prev + x_neighbor``, clamped to ``[lo, hi]`` when given."""
    x_prev = np.asarray(x_prev, dtype=np.float64).reshape(-1)
    x_neighbor = np.asarray(x_neighbor, dtype=np.float64).reshape(-1)
    if x_prev.shape != x_neighbor.shape:
        raise ContractError(f"x_prev {x_prev.shape} and x_neighbor {x_neighbor.shape} differ")
    out = gen.forward(type_name, x_prev + x_neighbor)
    if lo is not None:
        out = np.clip(out, lo, hi)
    return out


# ---------------------------------------------------------------------------
# fake node initialization
# ---------------------------------------------------------------------------

@dataclass
class FakeNodeInit:
    relation: int
    in_type: int
    con_type: int
    x0: np.ndarray
    prototype_in: np.ndarray
    prototype_con: np.ndarray
    candidates: np.ndarray  # original nodes of con_type, ascending


def type_prototype(g: HeteroGraph, t: int, base_nodes: int) -> np.ndarray:
    ids = g.nodes_of_type(t)
    rows = g.local_index[ids[ids < base_nodes]]
    return g.features[t][rows].mean(axis=0)


def init_fake_node(g: HeteroGraph, relation: int, rng: np.random.Generator, base_nodes: int | None = None,
                   noise: float = 0.05, noise_rng: np.random.Generator | None = None) -> FakeNodeInit:
    """Choose the injected type, the connect type, the prototypes and a start feature near the injected-type prototype."""
    base_nodes = g.num_nodes if base_nodes is None else base_nodes
    noise_rng = rng if noise_rng is None else noise_rng
    rel = g.relations[relation]
    in_type = int(rng.choice([rel.head, rel.tail]))
    con_type = rel.other_type(in_type)
    ids = g.nodes_of_type(in_type)
    feats = g.features[in_type][g.local_index[ids[ids < base_nodes]]]
    proto_in = feats.mean(axis=0)
    x0 = proto_in + noise_rng.standard_normal(proto_in.size) * noise * feats.std(axis=0)
    cands = g.nodes_of_type(con_type)
    cands = cands[cands < base_nodes]
    return FakeNodeInit(relation, in_type, con_type, x0, proto_in, type_prototype(g, con_type, base_nodes), cands)


def neighbor_summary(surrogate: SurrogateParams, init: FakeNodeInit) -> np.ndarray:
    """Mean neighbor feature expressed in the injected type's raw feature space.

    With equal feature dims this is the raw mean of the connect-type nodes.
    Otherwise the mean is taken in the shared aligned space and pulled back
    through the injected type's projector with a least-squares inverse.
    """
    if init.prototype_con.size == init.prototype_in.size:
        return init.prototype_con.copy()
    w_con, b_con = surrogate.proj_weights[init.con_type], surrogate.proj_biases[init.con_type]
    w_in, b_in = surrogate.proj_weights[init.in_type], surrogate.proj_biases[init.in_type]
    aligned = init.prototype_con @ w_con + b_con
    return (aligned - b_in) @ np.linalg.pinv(w_in)


def _feature_bounds(g: HeteroGraph, t: int, base_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    ids = g.nodes_of_type(t)
    f = g.features[t][g.local_index[ids[ids < base_nodes]]]
    return f.min(axis=0), f.max(axis=0)


# ---------------------------------------------------------------------------
# generator optimization
# ---------------------------------------------------------------------------

@dataclass
class PendingNode:
    """A fake node wired provisionally to every candidate; its feature row is swapped per step."""
    graph: HeteroGraph
    type_name: str
    in_type: int
    row: int  # local row of the fake node in its type's feature table
    x_in: np.ndarray  # generator input x_prev + x_neighbor
    lo: np.ndarray
    hi: np.ndarray
    eval_nodes: np.ndarray
    eval_labels: np.ndarray


def pending_node(g: HeteroGraph, init: FakeNodeInit, x_prev: np.ndarray, x_neighbor: np.ndarray,
                 eval_nodes: np.ndarray, eval_labels: np.ndarray, base_nodes: int) -> PendingNode:
    scratch = InjectionLedger(base_nodes)
    prov = inject_node(g, scratch, init.relation, init.in_type, init.x0, init.candidates)
    lo, hi = _feature_bounds(g, init.in_type, base_nodes)
    return PendingNode(prov, g.type_names[init.in_type], init.in_type, prov.features[init.in_type].shape[0] - 1,
                       np.asarray(x_prev) + np.asarray(x_neighbor), lo, hi, eval_nodes, eval_labels)


def pending_loss(surrogate: SurrogateParams, pend: PendingNode, x: np.ndarray, budget: AttackBudget) -> float:
    """Attack loss with the pending node carrying feature ``x``."""
    fc = forward(surrogate, pend.graph.with_feature_row(pend.in_type, pend.row, x))
    return attack_loss(fc.probs[pend.eval_nodes], pend.eval_labels, budget.k_conf, budget.r_ctrl)


def generator_loss(gen: FakeNodeGenerator, surrogate: SurrogateParams, pend: PendingNode,
                   budget: AttackBudget, net: MlpParams | None = None) -> float:
    """Attack loss as a function of the generator parameters (used by gradient checks)."""
    net = gen.nets[pend.type_name] if net is None else net
    raw, _ = mlp_forward(net, pend.x_in[None, :])
    return pending_loss(surrogate, pend, np.clip(raw[0], pend.lo, pend.hi), budget)


def generator_grad(gen: FakeNodeGenerator, surrogate: SurrogateParams, pend: PendingNode, budget: AttackBudget
                   ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Attack loss of the pending node, its gradient w.r.t. generator params, and the clamped feature."""
    net = gen.nets[pend.type_name]
    raw, cache = mlp_forward(net, pend.x_in[None, :])
    x = np.clip(raw[0], pend.lo, pend.hi)
    g = pend.graph.with_feature_row(pend.in_type, pend.row, x)
    fc = forward(surrogate, g)
    loss, dprobs_sel = attack_loss_grad(fc.probs[pend.eval_nodes], pend.eval_labels, budget.k_conf, budget.r_ctrl)
    dprobs = np.zeros_like(fc.probs)
    dprobs[pend.eval_nodes] = dprobs_sel
    dlogits = softmax_backward(fc.probs, dprobs, surrogate.temperature)
    _, dfeats = backward(surrogate, g, fc, dlogits)
    dx = dfeats[pend.in_type][pend.row]
    dx = dx * ((raw[0] >= pend.lo) & (raw[0] <= pend.hi))
    grads, _ = mlp_backward(net, cache, dx[None, :])
    return loss, grads, x


def train_generator_step(gen: FakeNodeGenerator, surrogate: SurrogateParams, pend: PendingNode,
                         budget: AttackBudget, lr: float | None = None) -> float:
    """One Adam step on the injected type's generator; returns the loss before the step.

    A non-finite loss rejects the step and retries once at half the learning
    rate; a second failure raises NumericFailure.
    """
    lr = budget.gen_lr if lr is None else lr
    if gen.frozen:
        raise ContractError("generator is frozen")
    opt = gen.optimizer(pend.type_name, lr)
    for attempt in range(2):
        loss, grads, _ = generator_grad(gen, surrogate, pend, budget)
        finite = np.isfinite(loss) and all(np.all(np.isfinite(v)) for v in grads.values())
        if finite:
            break
        if attempt == 0:
            log.warning("non-finite generator loss; halving learning rate")
            opt.lr = lr / 2
    else:
        raise NumericFailure("generator loss stayed non-finite after halving the learning rate")
    if opt.lr:
        net = gen.nets[pend.type_name]
        gen.nets[pend.type_name] = net.with_flat(opt.step(net.flat(), grads))
    return loss


# ---------------------------------------------------------------------------
# edge selection
# ---------------------------------------------------------------------------

def cw_edge_gradient(params: SurrogateParams, g: HeteroGraph, relation: int, h_in: np.ndarray, e: np.ndarray,
                     K: int, nodes: np.ndarray, labels: np.ndarray, k_conf: float = 0.0
                     ) -> tuple[float, np.ndarray]:
    """Clamped margin loss on the linearized logits and its exact gradient w.r.t. the full edge vector ``e``.

    With ``G`` the margin gradient on the logits, ``P = H'W2`` and
    ``Q = A'P``, the entry for node ``i`` is
    ``c_i (G_i.Q_n + (A'G)_i.P_n + G_n.Q_i + (A'G)_n.P_i)`` where
    ``c_i = lambda_i^-1/2 d_r^-1/2`` is how ``e_i`` enters ``A'``.
    """
    lin = linearize(params, g, relation, h_in, K)
    e = np.asarray(e, dtype=np.float64)
    p = lin.p
    q = lin.apply(e, p)
    z = lin.apply(e, q)
    zs = z[nodes]
    margin, best = _margins(zs, labels)
    loss = float(np.sum(np.maximum(margin, -k_conf)))
    gz = np.zeros_like(z)
    active = margin > -k_conf
    np.add.at(gz, (nodes[active], labels[active]), 1.0)
    np.add.at(gz, (nodes[active], best[active]), -1.0)
    ag = lin.apply(e, gz)
    n = lin.n
    c = lin.lam_isqrt / np.sqrt(lin.d_r)
    grad = c * (gz[:n] @ q[n] + ag[:n] @ p[n] + q[:n] @ gz[n] + p[:n] @ ag[n])
    return loss, grad


def edge_gradient(surrogate: SurrogateParams, g: HeteroGraph, init: FakeNodeInit, x_in: np.ndarray, K: int,
                  nodes: np.ndarray, labels: np.ndarray, k_conf: float = 0.0) -> np.ndarray:
    """Gradient of the linearized margin loss over the candidate edges of a pending fake node.

    Evaluated at the empty connection, where the exact derivative reduces to
    ``c_i h_in W2 . (G_i / d_r + (GD G)_i)``: the first-order effect of the
    fake node's own feature reaching candidate ``i`` and its neighbors.
    Entries are aligned with ``init.candidates``.
    """
    if init.candidates.size == 0:
        return np.zeros(0)
    h_in = np.asarray(x_in, dtype=np.float64) @ surrogate.proj_weights[init.in_type] + surrogate.proj_biases[init.in_type]
    _, grad = cw_edge_gradient(surrogate, g, init.relation, h_in, np.zeros(g.num_nodes), K, nodes, labels, k_conf)
    return grad[init.candidates]


def select_fake_edges(gradient, candidates, K: int) -> np.ndarray:
    """Candidates with the K largest |gradient|, ties to the lowest id."""
    gradient = np.asarray(gradient, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -np.abs(gradient)))
    return candidates[order[:K]]


def select_fake_edges_simple(g: HeteroGraph, candidates, K: int) -> np.ndarray:
    """The K candidates of lowest current total degree, ties to the lowest id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    deg = g.degree(None)[candidates]
    order = np.lexsort((candidates, deg))
    return candidates[order[:K]]


def select_fake_edges_random(candidates, K: int, rng: np.random.Generator) -> np.ndarray:
    candidates = np.asarray(candidates, dtype=np.int64)
    k = min(K, candidates.size)
    return np.sort(rng.choice(candidates, size=k, replace=False))


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

@dataclass
class AttackResult:
    perturbed: PerturbedGraph
    state: AttackState
    generators: FakeNodeGenerator | None
    graph: HeteroGraph  # materialized attacked graph

    def trace_report(self) -> dict:
        return {"budget": {"max_nodes": self.perturbed.max_nodes, "K": self.perturbed.K,
                           "injected": len(self.state.ledger), "edges": self.state.ledger.edge_count()},
                "steps": self.state.trace}


def run_attack(g: HeteroGraph, surrogate: SurrogateParams, budget: AttackBudget, seed: int,
               generators: FakeNodeGenerator | None = None, nodes: np.ndarray | None = None) -> AttackResult:
    """Inject ``budget.steps(N)`` fake nodes one at a time.

    ``nodes`` are the attacked target nodes (default: the test split); their
    true labels drive the losses. Independent random streams are used for the
    injected-type draw, the start-feature noise, generator init and random
    edge choice, so ablations differing only in strategy share the schedule.
    """
    n0 = g.num_nodes
    steps = budget.steps(n0)
    max_nodes = budget.max_nodes(n0)
    nodes = g.splits["test"] if nodes is None else np.asarray(nodes, dtype=np.int64)
    labels = g.labels[nodes]
    if np.any(labels < 0):
        raise GraphError("attacked nodes must be labeled")
    rng_type = np.random.default_rng([seed, 1])
    rng_noise = np.random.default_rng([seed, 2])
    rng_edges = np.random.default_rng([seed, 3])
    if budget.feature_strategy == "generator" and generators is None:
        generators = FakeNodeGenerator.init(g, budget.gen_hidden, np.random.default_rng([seed, 4]))
    mu = relation_weights(surrogate).copy()
    state = AttackState(0, mu, InjectionLedger(n0))
    cur = g
    for m in range(steps):
        r = select_relation(state.mu)
        init = init_fake_node(cur, r, rng_type, n0, budget.init_noise, rng_noise)
        losses: list[float] = []
        if budget.feature_strategy == "generator":
            type_name = cur.type_names[init.in_type]
            x_nb = neighbor_summary(surrogate, init)
            pend = pending_node(cur, init, init.x0, x_nb, nodes, labels, n0)
            if not generators.frozen:
                for _ in range(budget.gen_steps):
                    losses.append(train_generator_step(generators, surrogate, pend, budget))
            x = generate_fake_feature(generators, type_name, init.x0, x_nb, pend.lo, pend.hi)
            losses.append(pending_loss(surrogate, pend, x, budget))
        else:
            x = init.prototype_in.copy()
        if budget.edge_strategy == "gradient":
            grad = edge_gradient(surrogate, cur, init, x, budget.K, nodes, labels, budget.k_conf)
            valid = grad < 0 if budget.descent_only else np.ones(grad.size, dtype=bool)
            nbrs = select_fake_edges(grad[valid], init.candidates[valid], budget.K)
        elif budget.edge_strategy == "simple":
            nbrs = select_fake_edges_simple(cur, init.candidates, budget.K)
        else:
            nbrs = select_fake_edges_random(init.candidates, budget.K, rng_edges)
        mu_before = state.mu.copy()
        cur = inject_node(cur, state.ledger, r, init.in_type, x, nbrs, max_degree=budget.K)
        if len(state.ledger) > max_nodes:
            raise BudgetViolation(f"{len(state.ledger)} injected nodes exceeds budget {max_nodes}")
        state.mu = reweight(state.mu, r, budget.beta)
        state.step = m + 1
        state.trace.append({
            "step": m,
            "relation": cur.relations[r].name,
            "mu": mu_before.tolist(),
            "node_id": n0 + m,
            "node_type": cur.type_names[init.in_type],
            "neighbors": [int(v) for v in nbrs],
            "generator_losses": [float(v) for v in losses],
        })
        log.debug("step %d: relation %s, neighbors %s", m, cur.relations[r].name, list(nbrs))
    perturbed = PerturbedGraph(g, state.ledger, max_nodes, budget.K)
    validate_injection(g, cur, state.ledger, max_nodes, budget.K)
    return AttackResult(perturbed, state, generators, cur)

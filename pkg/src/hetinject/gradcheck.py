"""Finite-difference verification of every hand-written gradient on tiny random graphs."""
from __future__ import annotations

import numpy as np

from .attack import (
    AttackBudget,
    FakeNodeGenerator,
    cw_edge_gradient,
    edge_gradient,
    generator_grad,
    generator_loss,
    init_fake_node,
    neighbor_summary,
    pending_node,
)
from .evaluate import RgcnParams, rgcn_loss_and_grads
from .graph import HeteroGraph, make_relation
from .numerics import MlpParams, finite_diff_grad, mlp_backward, mlp_forward, softmax_ce_grad
from .surrogate import SurrogateParams, loss_and_grads

CHECKS = ("mlp_backward", "softmax_ce_grad", "surrogate_loss", "edge_gradient", "edge_gradient_at_zero",
          "generator", "rgcn_loss")
DEFAULT_TOL = 1e-4


def random_small_graph(rng: np.random.Generator, max_nodes: int = 10) -> HeteroGraph:
    """Two node types, a cross-type and a same-type relation, at most ``max_nodes`` nodes."""
    n_a = int(rng.integers(3, max_nodes - 2))
    n_b = int(rng.integers(2, max_nodes - n_a + 1))
    n = n_a + n_b
    node_type = rng.permutation(np.array([0] * n_a + [1] * n_b))
    a_ids, b_ids = np.flatnonzero(node_type == 0), np.flatnonzero(node_type == 1)
    dims = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
    features = [rng.standard_normal((n_a, dims[0])), rng.standard_normal((n_b, dims[1]))]

    def pairs(xs, ys, p, same):
        out = [(x, y) for x in xs for y in ys if (not same or x < y) and rng.random() < p]
        return [x for x, _ in out], [y for _, y in out]

    rels = [make_relation("ab", 0, 1, *pairs(a_ids, b_ids, 0.5, False), n),
            make_relation("aa", 0, 0, *pairs(a_ids, a_ids, 0.5, True), n)]
    labels = np.full(n, -1)
    labels[a_ids] = rng.integers(0, 3, size=n_a)
    return HeteroGraph(["a", "b"], node_type, features, rels, labels,
                       {"train": a_ids, "val": [], "test": []}, 0, 3, {"a": "content", "b": "attribute"})


def _flat_fd(f, values: dict[str, np.ndarray], rebuild) -> dict[str, np.ndarray]:
    out = {}
    for key in sorted(values):
        def fk(x, key=key):
            v = dict(values)
            v[key] = x
            return f(rebuild(v))
        out[key] = finite_diff_grad(fk, values[key])
    return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||); entrywise ratios blow up on entries that are pure roundoff."""
    a, b = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def _jitter(p: MlpParams, rng: np.random.Generator) -> MlpParams:
    # zero biases would leave dead rows exactly on the ReLU kink
    v = p.flat()
    return p.with_flat({k: a + 0.1 * rng.standard_normal(a.shape) if k.startswith("b") else a
                        for k, a in v.items()})


def _stack(d: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(d[k]) for k in sorted(d)])


def check_instance(seed: int, sign_flip: bool = False) -> dict[str, float]:
    """Relative error between analytic and central-difference gradients, per check."""
    rng = np.random.default_rng([seed, 23])
    flip = -1.0 if sign_flip else 1.0
    g = random_small_graph(rng)
    nodes, labels = g.labeled("train")
    errors = {}

    mlp = _jitter(MlpParams.init([3, 5, 4], rng, final_activation="relu"), rng)
    x = rng.standard_normal((4, 3))
    up = rng.standard_normal((4, 4))
    _, cache = mlp_forward(mlp, x)
    grads, dx = mlp_backward(mlp, cache, up)
    analytic = np.concatenate([_stack(grads), dx.ravel()])
    fd = _stack(_flat_fd(lambda p: float(np.sum(mlp_forward(p, x)[0] * up)), mlp.flat(), mlp.with_flat))
    fd_x = finite_diff_grad(lambda z: float(np.sum(mlp_forward(mlp, z)[0] * up)), x)
    errors["mlp_backward"] = rel_error(flip * analytic, np.concatenate([fd, fd_x.ravel()]))

    logits = rng.standard_normal((5, 3))
    y = rng.integers(0, 3, size=5)
    temp = float(rng.uniform(0.5, 2.0))
    _, dl = softmax_ce_grad(logits, y, temp)
    fd = finite_diff_grad(lambda z: softmax_ce_grad(z, y, temp)[0], logits)
    errors["softmax_ce_grad"] = rel_error(flip * dl, fd)

    params = SurrogateParams.init([g.feature_dim(t) for t in range(g.num_types)], g.num_relations, 3, 4, rng)
    params.mu_logits = rng.standard_normal(g.num_relations)
    _, grads = loss_and_grads(params, g, nodes, labels)
    fd = _flat_fd(lambda p: loss_and_grads(p, g, nodes, labels)[0], params.flat(), params.with_flat)
    errors["surrogate_loss"] = rel_error(flip * _stack(grads), _stack(fd))

    r = 0
    h_in = rng.standard_normal(params.hidden_dim)
    K = 3
    e = rng.uniform(0.0, 1.0, size=g.num_nodes)
    _, grad = cw_edge_gradient(params, g, r, h_in, e, K, nodes, labels)
    fd = finite_diff_grad(lambda v: cw_edge_gradient(params, g, r, h_in, v, K, nodes, labels)[0], e)
    errors["edge_gradient"] = rel_error(flip * grad, fd)

    init = init_fake_node(g, r, rng)
    x_in = rng.standard_normal(g.feature_dim(init.in_type))
    grad = edge_gradient(params, g, init, x_in, K, nodes, labels)
    h = x_in @ params.proj_weights[init.in_type] + params.proj_biases[init.in_type]
    fd = finite_diff_grad(lambda v: cw_edge_gradient(params, g, r, h, v, K, nodes, labels)[0], np.zeros(g.num_nodes))
    errors["edge_gradient_at_zero"] = rel_error(flip * grad, fd[init.candidates])

    budget = AttackBudget(gen_hidden=4)
    gen = FakeNodeGenerator.init(g, 4, rng)
    gen.nets = {k: _jitter(v, rng) for k, v in gen.nets.items()}
    pend = pending_node(g, init, init.x0, neighbor_summary(params, init), nodes, labels, g.num_nodes)
    # widen the clamp box so the check exercises the unclamped path
    pend.lo, pend.hi = pend.lo - 10.0, pend.hi + 10.0
    _, grads, _ = generator_grad(gen, params, pend, budget)
    net = gen.nets[pend.type_name]
    fd = _flat_fd(lambda p: generator_loss(gen, params, pend, budget, net=p), net.flat(), net.with_flat)
    errors["generator"] = rel_error(flip * _stack(grads), _stack(fd))

    rg = RgcnParams.init([g.feature_dim(t) for t in range(g.num_types)], g.num_relations, 4, 3, rng)
    _, grads = rgcn_loss_and_grads(rg, g, nodes, labels)
    fd = _flat_fd(lambda v: rgcn_loss_and_grads(RgcnParams(v, rg.num_types, rg.num_relations), g, nodes, labels)[0],
                  rg.values, lambda v: v)
    errors["rgcn_loss"] = rel_error(flip * _stack(grads), _stack(fd))
    return errors


def run_gradcheck(instances: int = 10, seed: int = 0, tol: float = DEFAULT_TOL, sign_flip: bool = False) -> dict:
    """Check every gradient on ``instances`` random graphs; ``passed`` requires every error <= ``tol``."""
    rows = []
    for i in range(instances):
        errs = check_instance(seed * 100003 + i, sign_flip)
        rows.append({"instance": i, "errors": errs, "passed": all(v <= tol for v in errs.values())})
    worst = {name: max(row["errors"][name] for row in rows) for name in CHECKS} if rows else {}
    return {
        "tolerance": tol,
        "instances": rows,
        "max_error": worst,
        "failures": sum(not row["passed"] for row in rows),
        "passed": all(row["passed"] for row in rows),
    }

"""Task-specific prompt pools with key-query selection and joint training.

Selection scores each pool key once against the query (M evaluations total)
and keeps the K smallest cosine distances; because the selection objective
decomposes per key, greedy top-K equals exhaustive subset minimization.

The training loss couples classification of the prompted representation with
a surrogate term pulling selected keys toward the query. Gradients reach only
the selected prompts, the selected keys, and the classifier; the query vector
is treated as a constant, and unselected pool entries receive exactly zero
gradient.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import Prompt, prompted_graph
from .errors import DegenerateInputError, InvalidArgumentError
from .numeric import top_k_indices
from .optim import make_optimizer

KEY_INIT = "unit-sphere"
PROMPT_INIT_STD = 0.02


@dataclass
class Selection:
    indices: np.ndarray   # K pool indices, ascending distance
    distances: np.ndarray  # matching cosine distances


class PromptPool:
    def __init__(self, task_id, pool_size, top_k, dim, rng, prompt_length=1,
                 surrogate_weight=0.1, relation_ids=None):
        if not 1 <= top_k <= pool_size:
            raise InvalidArgumentError(f"top_k={top_k} out of range for pool of {pool_size}")
        self.task_id = int(task_id)
        self.pool_size = pool_size
        self.top_k = top_k
        self.dim = dim
        self.prompt_length = prompt_length
        self.surrogate_weight = float(surrogate_weight)
        self.relation_ids = None if relation_ids is None else tuple(int(r) for r in relation_ids)
        self.keys = np.stack([rng.unit_vector(dim) for _ in range(pool_size)])
        self.prompts = [
            Prompt(rng.normal((prompt_length, dim), PROMPT_INIT_STD),
                   rng.normal((prompt_length, dim), PROMPT_INIT_STD))
            for _ in range(pool_size)
        ]
        self.frozen = False
        self.loss_curve = []

    def freeze(self):
        self.keys.flags.writeable = False
        for p in self.prompts:
            p.p_k.flags.writeable = False
            p.p_v.flags.writeable = False
        self.frozen = True
        return self

    def arrays(self):
        yield "keys", self.keys
        for i, p in enumerate(self.prompts):
            yield f"prompt{i}.p_k", p.p_k
            yield f"prompt{i}.p_v", p.p_v


def pool_checksum(pool):
    h = hashlib.sha256()
    for name, arr in pool.arrays():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def select(pool, q):
    """Top-K pool entries by cosine distance to the query (one score per key)."""
    q = np.asarray(q, dtype=np.float64)
    qn = np.linalg.norm(q)
    key_norms = np.linalg.norm(pool.keys, axis=1)
    if qn == 0.0 or np.any(key_norms == 0.0):
        raise DegenerateInputError("zero-norm query or pool key")
    dists = np.clip(1.0 - (pool.keys @ q) / (key_norms * qn), 0.0, 2.0)
    idx = top_k_indices(dists, pool.top_k)
    return Selection(indices=idx, distances=dists[idx])


@dataclass
class PoolLossResult:
    loss: float
    selection: Selection
    key_grads: np.ndarray          # (K, dim), rows align with selection.indices
    prompt_grads: list             # K pairs of (d p_k, d p_v)
    head_grads: dict               # gradients for the classifier parameters


def pool_loss(pool, seq, label, encoder, head, q, selection=None):
    """Joint loss and gradients for one labeled sequence.

    q is the precomputed (constant) query vector; selection defaults to the
    current top-K against q.
    """
    if pool.relation_ids is not None and int(label) not in pool.relation_ids:
        raise InvalidArgumentError(f"label {label} outside this task's relations")
    if not 0 <= int(label) < head.n_out:
        raise InvalidArgumentError(f"label {label} outside classifier range {head.n_out}")
    if selection is None:
        selection = select(pool, q)

    key_leaves = [ad.leaf(pool.keys[i]) for i in selection.indices]
    prompt_leaves = [(ad.leaf(pool.prompts[i].p_k), ad.leaf(pool.prompts[i].p_v))
                     for i in selection.indices]
    head_leaves = head.make_leaves()

    z = prompted_graph(seq, encoder, prompt_leaves)
    logits = head.graph_logits(z, head_leaves)
    terms = [ad.cross_entropy_mean(logits, [int(label)])]
    if pool.surrogate_weight != 0.0:
        surr = ad.add_scalars([ad.cosine_distance_to(q, k) for k in key_leaves])
        terms.append(ad.scale(surr, pool.surrogate_weight))
    total = ad.add_scalars(terms)
    ad.backward(total)

    def grad_of(t):
        return t.grad if t.grad is not None else np.zeros_like(t.value)

    return PoolLossResult(
        loss=float(total.value),
        selection=selection,
        key_grads=np.stack([grad_of(k) for k in key_leaves]),
        prompt_grads=[(grad_of(pk), grad_of(pv)) for pk, pv in prompt_leaves],
        head_grads={k: grad_of(t) for k, t in head_leaves.items()},
    )


def train_pool(pool, dataset, encoder, head, lr, epochs, rng, batch_size=16,
               optimizer="sgd", queries=None):
    """Mini-batch descent on the joint objective; returns (pool, head).

    The encoder stays frozen; queries are computed once per input and reused
    across epochs (pass them in to share with other stages). Previously
    frozen pools are never touched.
    """
    from .attention import encode_query

    if not dataset:
        raise InvalidArgumentError("empty task dataset")
    if pool.frozen:
        raise InvalidArgumentError("pool is frozen; training runs once per task")
    if not encoder.frozen:
        raise InvalidArgumentError("encoder must be frozen before pool training")

    if queries is None:
        queries = [encode_query(seq, encoder) for seq in dataset]
    elif len(queries) != len(dataset):
        raise InvalidArgumentError("one precomputed query per sample required")
    labels = [seq.label for seq in dataset]
    opt = make_optimizer(optimizer, lr)
    n = len(dataset)
    params = {"keys": pool.keys}
    for i, p in enumerate(pool.prompts):
        params[f"pk{i}"] = p.p_k
        params[f"pv{i}"] = p.p_v
    for k, v in head.params().items():
        params[f"head.{k}"] = v

    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grads = {name: np.zeros_like(arr) for name, arr in params.items()}
            batch_loss = 0.0
            for j in idx:
                res = pool_loss(pool, dataset[j], labels[j], encoder, head, queries[j])
                batch_loss += res.loss
                for row, sel in enumerate(res.selection.indices):
                    grads["keys"][sel] += res.key_grads[row]
                    grads[f"pk{sel}"] += res.prompt_grads[row][0]
                    grads[f"pv{sel}"] += res.prompt_grads[row][1]
                for k, g in res.head_grads.items():
                    grads[f"head.{k}"] += g
            scale = 1.0 / len(idx)
            grads = {k: g * scale for k, g in grads.items()}
            opt.step(params, grads)
            epoch_losses.append(batch_loss / len(idx))
        curve.append(float(np.mean(epoch_losses)))
    pool.loss_curve = curve
    return pool, head

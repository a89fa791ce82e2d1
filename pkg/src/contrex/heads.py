"""Task-predictor and relation-classifier heads with replay-based training.

Both heads are 2-layer tanh MLPs trained with cross-entropy over RELATION
labels; task identity is never a training target and is only derived through
RelationTaskMap at prediction time. Replay training consumes latents sampled
from the generative store, so no raw instance is needed after a task ends.
"""

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError
from .optim import make_optimizer
from .replay import sample

DEFAULT_HIDDEN = 64


class RelationTaskMap:
    """Bijective partition of relations into tasks."""

    def __init__(self):
        self._relation_to_task = {}
        self._task_to_relations = {}

    def add_task(self, task_id, relations):
        t = int(task_id)
        if t in self._task_to_relations:
            raise InvalidArgumentError(f"task {t} already registered")
        rels = [int(r) for r in relations]
        for r in rels:
            if r in self._relation_to_task:
                raise InvalidArgumentError(
                    f"relation {r} already owned by task {self._relation_to_task[r]}"
                )
        self._task_to_relations[t] = list(rels)
        for r in rels:
            self._relation_to_task[r] = t

    def task_of(self, relation):
        return self._relation_to_task[int(relation)]

    def relations_of(self, task_id):
        return list(self._task_to_relations[int(task_id)])

    def all_relations(self):
        return sorted(self._relation_to_task)

    @property
    def n_tasks(self):
        return len(self._task_to_relations)

    @property
    def n_relations(self):
        return len(self._relation_to_task)

    def to_dict(self):
        return {str(t): rels for t, rels in sorted(self._task_to_relations.items())}

    @classmethod
    def from_dict(cls, d):
        m = cls()
        for t in sorted(d, key=int):
            m.add_task(int(t), d[t])
        return m


class ClassifierHead:
    def __init__(self, input_dim, n_out, rng, hidden_dim=DEFAULT_HIDDEN):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.n_out = n_out
        self.w1 = rng.normal((input_dim, hidden_dim), 1.0 / np.sqrt(input_dim))
        self.b1 = np.zeros(hidden_dim)
        self.w2 = rng.normal((hidden_dim, n_out), 1.0 / np.sqrt(hidden_dim))
        self.b2 = np.zeros(n_out)
        self.loss_curve = []

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def logits(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def graph_logits(self, x_t, leaves=None):
        """Logits on the tape; pass leaf tensors to make the head trainable."""
        p = leaves if leaves is not None else {k: ad.constant(v) for k, v in self.params().items()}
        inner = ad.tanh(ad.add_bias(ad.matmul(x_t, p["w1"]), p["b1"]))
        return ad.add_bias(ad.matmul(inner, p["w2"]), p["b2"])

    def make_leaves(self):
        return {k: ad.leaf(v) for k, v in self.params().items()}

    def arrays(self):
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


def new_head(input_dim, n_out, rng, hidden_dim=DEFAULT_HIDDEN):
    if n_out < 1:
        raise InvalidArgumentError("head needs at least one output class")
    return ClassifierHead(input_dim, n_out, rng, hidden_dim)


def expand_head(head, new_relations, rng):
    """Widen the output layer; existing output columns are preserved bit-exactly."""
    if new_relations < 1:
        raise InvalidArgumentError("expansion must add at least one class")
    fresh_w = rng.normal((head.hidden_dim, new_relations), 1.0 / np.sqrt(head.hidden_dim))
    head.w2 = np.concatenate([head.w2, fresh_w], axis=1)
    head.b2 = np.concatenate([head.b2, np.zeros(new_relations)])
    head.n_out += new_relations
    return head


def train_head_on(head, x, y, epochs, lr, rng, batch_size=64, optimizer="sgd"):
    """Mini-batch cross-entropy training; records epoch-mean losses."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise InvalidArgumentError("empty training set")
    opt = make_optimizer(optimizer, lr)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], batch_size):
            idx = order[start : start + batch_size]
            leaves = head.make_leaves()
            loss = ad.cross_entropy_mean(head.graph_logits(ad.constant(x[idx]), leaves), y[idx])
            ad.backward(loss)
            opt.step(head.params(), {k: t.grad for k, t in leaves.items()})
            losses.append(float(loss.value))
        curve.append(float(np.mean(losses)))
    head.loss_curve = curve
    return head


def _pseudo_dataset(store, relations, samples_per_relation, rng, space):
    xs, ys = [], []
    for r in relations:
        model = store.query_model(r) if space == "query" else store.prompted_model(r)
        xs.append(sample(model, samples_per_relation, rng))
        ys.append(np.full(samples_per_relation, r, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def train_task_predictor(head, store, task_map, samples_per_relation, epochs, lr, rng,
                         batch_size=64, optimizer="sgd"):
    """Train on query-space replay with per-relation labels (never task labels)."""
    if len(store) == 0:
        raise InvalidArgumentError("generative store is empty")
    missing = [r for r in task_map.all_relations() if r not in store]
    if missing:
        raise InvalidArgumentError(f"store lacks models for relations {missing}")
    x, y = _pseudo_dataset(store, task_map.all_relations(), samples_per_relation, rng, "query")
    return train_head_on(head, x, y, epochs, lr, rng, batch_size, optimizer)


def train_relation_classifier(head, store, samples_per_relation, epochs, lr, rng,
                              batch_size=64, optimizer="sgd"):
    """Train on prompted-space replay over every relation seen so far."""
    if len(store) == 0:
        raise InvalidArgumentError("generative store is empty")
    x, y = _pseudo_dataset(store, store.relations(), samples_per_relation, rng, "prompted")
    return train_head_on(head, x, y, epochs, lr, rng, batch_size, optimizer)


def predict_task(head, task_map, q):
    """Task of the argmax relation; np.argmax breaks ties at the lowest index."""
    logits = head.logits(q)[0]
    return task_map.task_of(int(np.argmax(logits)))


def classify_relation(head, z):
    return int(np.argmax(head.logits(z)[0]))

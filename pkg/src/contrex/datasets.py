"""Synthetic continual relation-extraction streams and FewRel-format ingestion.

Every relation is a token template: a small context vocabulary (optionally
overlapping with other relations' contexts) plus two marked entity slots.
Sequences look like

    [START] ctx .. [E1 ent E1/] ctx .. [E2 ent E2/] ctx ..

with the entity spans pointing at the entity content tokens. Token ids 0-5
are reserved (sequence start, four entity markers, padding); content ids
start at 6. Generation is pure given (config, seed).
"""

import json
from dataclasses import dataclass, field

from .errors import InvalidArgumentError, ParseError
from .numeric import RngState

SEQ_START = 0
E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE = 1, 2, 3, 4
PAD = 5
FIRST_CONTENT = 6

CONTEXT_TOKENS_PER_RELATION = 6
ENTITY_POOL_SIZE = 8


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    e1_span: tuple
    e2_span: tuple
    label: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "e1_span", tuple(int(x) for x in self.e1_span))
        object.__setattr__(self, "e2_span", tuple(int(x) for x in self.e2_span))
        n = len(self.tokens)
        for span in (self.e1_span, self.e2_span):
            if not (0 <= span[0] < span[1] <= n):
                raise InvalidArgumentError(f"entity span {span} outside sequence of length {n}")
        a, b = sorted([self.e1_span, self.e2_span])
        if a[1] > b[0]:
            raise InvalidArgumentError(f"entity spans {self.e1_span}/{self.e2_span} overlap")
        if self.label < 0:
            raise InvalidArgumentError("relation label must be non-negative")


@dataclass
class TaskData:
    train: list
    test: list
    relations: list


@dataclass
class TaskStream:
    tasks: list
    vocab_size: int
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_tasks(self):
        return len(self.tasks)


@dataclass(frozen=True)
class StreamConfig:
    n_tasks: int = 5
    relations_per_task: int = 4
    train_per_relation: int = 100
    test_per_relation: int = 40
    vocab_size: int = 120
    seq_len: int = 16
    context_overlap: float = 0.25
    imbalanced: bool = False


def _template_layout(cfg):
    """Partition the content vocabulary into shared/private/entity pools."""
    total_relations = cfg.n_tasks * cfg.relations_per_task
    shared_per_relation = int(round(CONTEXT_TOKENS_PER_RELATION * cfg.context_overlap))
    private_per_relation = CONTEXT_TOKENS_PER_RELATION - shared_per_relation
    shared_pool = 2 * shared_per_relation
    needed = FIRST_CONTENT + shared_pool + total_relations * private_per_relation + ENTITY_POOL_SIZE
    if cfg.vocab_size < needed:
        raise InvalidArgumentError(
            f"vocab_size {cfg.vocab_size} too small for {total_relations} relation "
            f"templates (need at least {needed})"
        )
    at = FIRST_CONTENT
    shared = list(range(at, at + shared_pool))
    at += shared_pool
    private = []
    for _ in range(total_relations):
        private.append(list(range(at, at + private_per_relation)))
        at += private_per_relation
    entities = list(range(at, at + ENTITY_POOL_SIZE))
    return shared, private, entities, shared_per_relation


def _make_sample(ctx, entities, relation, cfg, rng):
    n = cfg.seq_len
    if n < 8:
        raise InvalidArgumentError("seq_len must be at least 8 to fit both entities")
    # entity blocks are [open, token, close]; pick non-overlapping starts
    p1 = 1 + int(rng.integers(0, n - 7))
    p2 = p1 + 3 + int(rng.integers(0, n - p1 - 6))
    tokens = [SEQ_START] + [0] * (n - 1)
    for pos in range(1, n):
        tokens[pos] = ctx[int(rng.integers(0, len(ctx)))]
    tokens[p1] = E1_OPEN
    tokens[p1 + 1] = entities[int(rng.integers(0, len(entities)))]
    tokens[p1 + 2] = E1_CLOSE
    tokens[p2] = E2_OPEN
    tokens[p2 + 1] = entities[int(rng.integers(0, len(entities)))]
    tokens[p2 + 2] = E2_CLOSE
    # spans cover marker..close-marker, so span starts sit on the markers
    return TokenSequence(tokens, (p1, p1 + 3), (p2, p2 + 3), relation)


def generate_stream(config, seed):
    """Deterministic synthetic TaskStream with disjoint relation sets."""
    cfg = config if isinstance(config, StreamConfig) else StreamConfig(**config)
    for name in ("n_tasks", "relations_per_task", "train_per_relation",
                 "test_per_relation", "vocab_size", "seq_len"):
        if getattr(cfg, name) < 1:
            raise InvalidArgumentError(f"{name} must be >= 1")
    if not 0.0 <= cfg.context_overlap <= 1.0:
        raise InvalidArgumentError("context_overlap must lie in [0, 1]")

    root = RngState(seed)
    shared_pool, private, entities, shared_n = _template_layout(cfg)
    tasks = []
    relation = 0
    for t in range(cfg.n_tasks):
        train, test, relations = [], [], []
        for _ in range(cfg.relations_per_task):
            rng = root.spawn(f"relation-{relation}")
            ctx = list(private[relation])
            if shared_n:
                picks = rng.permutation(len(shared_pool))[:shared_n]
                ctx += [shared_pool[i] for i in picks]
            n_train = cfg.train_per_relation
            if cfg.imbalanced:
                # skew counts inside each task from 100% down to 25%
                frac = 1.0 - 0.75 * (relation % cfg.relations_per_task) / max(
                    cfg.relations_per_task - 1, 1
                )
                n_train = max(2, int(round(cfg.train_per_relation * frac)))
            train.extend(_make_sample(ctx, entities, relation, cfg, rng)
                         for _ in range(n_train))
            test.extend(_make_sample(ctx, entities, relation, cfg, rng)
                        for _ in range(cfg.test_per_relation))
            relations.append(relation)
            relation += 1
        tasks.append(TaskData(train=train, test=test, relations=relations))
    return TaskStream(tasks=tasks, vocab_size=cfg.vocab_size, seed=int(seed),
                      meta={"source": "synthetic", "config": cfg.__dict__.copy()})


def context_token_sets(stream):
    """Non-entity content tokens per relation; used to audit template overlap."""
    sets = {}
    for task in stream.tasks:
        for s in task.train + task.test:
            entity_pos = set(range(*s.e1_span)) | set(range(*s.e2_span))
            bucket = sets.setdefault(s.label, set())
            for i, tok in enumerate(s.tokens):
                if i == 0 or i in entity_pos:
                    continue
                bucket.add(tok)
    return sets


def export_jsonl(stream, path):
    """Line-delimited JSON debug dump; first line is a header record."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"record": "header", "vocab_size": stream.vocab_size,
                  "seed": stream.seed, "n_tasks": stream.n_tasks, "meta": stream.meta}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for t, task in enumerate(stream.tasks):
            for split_name, split in (("train", task.train), ("test", task.test)):
                for s in split:
                    rec = {"record": "sample", "task": t, "split": split_name,
                           "tokens": list(s.tokens), "e1": list(s.e1_span),
                           "e2": list(s.e2_span), "label": s.label}
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _require(cond, msg):
    if not cond:
        raise ParseError(msg)


def ingest_fewrel_json(path, n_tasks, seed, train_fraction=0.8):
    """Build a TaskStream from a FewRel-layout JSON file.

    Expected layout: {"relation": [{"tokens": [str, ...],
    "h": [name, id, [[token positions]]], "t": [...]}, ...], ...}.
    Relations are shuffled into n_tasks disjoint tasks by seed and re-labeled
    contiguously in task order so labels index classifier outputs directly.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from exc
    _require(isinstance(raw, dict) and raw, f"{path}: expected a non-empty relation mapping")

    vocab = sorted({tok for samples in raw.values() for s in samples
                    for tok in (s.get("tokens") or [])})
    token_id = {tok: FIRST_CONTENT + i for i, tok in enumerate(vocab)}

    def convert(rel_name, index, sample, label):
        where = f"{path}: relation {rel_name!r} sample {index}"
        _require(isinstance(sample, dict), f"{where}: not an object")
        tokens = sample.get("tokens")
        _require(isinstance(tokens, list) and tokens, f"{where}: missing tokens")
        spans = []
        for entity_key in ("h", "t"):
            ent = sample.get(entity_key)
            _require(isinstance(ent, list) and len(ent) >= 3, f"{where}: missing {entity_key} span")
            mentions = ent[2]
            _require(isinstance(mentions, list) and mentions and mentions[0],
                     f"{where}: missing {entity_key} span positions")
            positions = sorted(int(p) for p in mentions[0])
            spans.append((positions[0] + 1, positions[-1] + 2))  # +1 for SEQ_START shift
        ids = [SEQ_START] + [token_id[t] for t in tokens]
        try:
            return TokenSequence(ids, spans[0], spans[1], label)
        except InvalidArgumentError as exc:
            raise ParseError(f"{where}: {exc}") from exc

    names = sorted(raw)
    for name in names:
        _require(isinstance(raw[name], list) and raw[name],
                 f"{path}: relation {name!r} has no samples")

    rng = RngState(seed)
    order = [names[i] for i in rng.permutation(len(names))]
    base, extra = divmod(len(order), n_tasks)
    _require(base >= 1, f"{path}: {len(order)} relations cannot fill {n_tasks} tasks")

    tasks = []
    label = 0
    at = 0
    for t in range(n_tasks):
        count = base + (1 if t < extra else 0)
        rel_names = order[at : at + count]
        at += count
        train, test, relations = [], [], []
        for rel_name in rel_names:
            samples = [convert(rel_name, i, s, label) for i, s in enumerate(raw[rel_name])]
            perm = rng.permutation(len(samples))
            cut = max(1, int(round(train_fraction * len(samples))))
            if cut >= len(samples) and len(samples) > 1:
                cut = len(samples) - 1
            train.extend(samples[i] for i in perm[:cut])
            test.extend(samples[i] for i in perm[cut:])
            relations.append(label)
            label += 1
        tasks.append(TaskData(train=train, test=test, relations=relations))
    vocab_size = FIRST_CONTENT + len(vocab)
    return TaskStream(tasks=tasks, vocab_size=vocab_size, seed=int(seed),
                      meta={"source": "fewrel", "path": str(path),
                            "relation_names": order})

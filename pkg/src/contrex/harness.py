"""Continual-learning orchestration: per-task training, inference, metrics.

Each task runs three stages: (1) train a fresh prompt pool jointly with the
relation classifier on the task's data, then freeze the pool; (2) fit
generative models over query- and prompted-space latents for each new
relation; (3) sample pseudo-datasets for every relation seen so far and
retrain both heads from scratch on replay alone. After a task finishes, its
raw training instances are never read again; only the generative store grows.

The state records encoder and pool checksums so the frozen contracts are
verifiable at any point. Reports carry per-task accuracy, task-prediction
precision, and both size-weighted and unweighted averages.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import encode_prompted, encode_query, init_encoder, params_checksum
from .config import RunConfig, stream_config_of
from .datasets import generate_stream, ingest_fewrel_json
from .errors import InvalidArgumentError
from .heads import (
    RelationTaskMap,
    classify_relation,
    expand_head,
    new_head,
    predict_task,
    train_head_on,
    train_relation_classifier,
    train_task_predictor,
)
from .numeric import RngState
from .prompt_pool import PromptPool, pool_checksum, select, train_pool
from .replay import LatentGaussianStore, fit_mixture
from .serialization import read_blob, write_blob


@dataclass
class StageReport:
    stage: int                       # 1-based count of tasks trained
    per_task_accuracy: list          # relation accuracy on each test split
    task_precision: list             # fraction routed to the right task
    test_sizes: list
    average_accuracy: float          # weighted by test-split sizes
    average_accuracy_unweighted: float
    wall_clock_seconds: float = 0.0  # informational; excluded from report files


@dataclass
class ContinualState:
    config: RunConfig
    seed: int
    encoder: object
    pools: list = field(default_factory=list)
    store: LatentGaussianStore = field(default_factory=LatentGaussianStore)
    task_map: RelationTaskMap = field(default_factory=RelationTaskMap)
    relation_head: object = None
    task_head: object = None
    history: list = field(default_factory=list)
    eval_splits: list = field(default_factory=list)  # test data, evaluation only
    encoder_checksum: str = ""
    pool_checksums: list = field(default_factory=list)

    @property
    def n_tasks_trained(self):
        return len(self.pools)

    def frozen_contract_violations(self):
        """Empty list when the encoder and all prior pools are untouched."""
        problems = []
        if params_checksum(self.encoder) != self.encoder_checksum:
            problems.append("encoder weights changed after freezing")
        for i, (pool, recorded) in enumerate(zip(self.pools, self.pool_checksums)):
            if pool_checksum(pool) != recorded:
                problems.append(f"pool {i} changed after its task completed")
        return problems


def build_stream(cfg, seed):
    if cfg.dataset.source == "fewrel":
        return ingest_fewrel_json(cfg.dataset.fewrel_path, cfg.dataset.n_tasks, seed)
    return generate_stream(stream_config_of(cfg), seed)


def init_state_for_stream(cfg, seed, stream):
    max_len = max(len(s.tokens) for task in stream.tasks for s in task.train + task.test)
    rng = RngState(seed).spawn("encoder")
    encoder = init_encoder(
        vocab_size=stream.vocab_size, dim=cfg.model.dim, n_heads=cfg.model.n_heads,
        n_layers=cfg.model.n_layers, max_len=max_len, rng=rng,
        ffn_hidden=cfg.model.ffn_hidden or None, query_pooling=cfg.model.query_pooling,
    )
    return ContinualState(config=cfg, seed=int(seed), encoder=encoder,
                          encoder_checksum=params_checksum(encoder))


def train_task(state, task_data):
    """Run the three training stages on one task, then append a StageReport."""
    started = time.perf_counter()
    cfg = state.config
    t = state.n_tasks_trained
    relations = list(task_data.relations)
    state.task_map.add_task(t, relations)  # raises on relation collision
    total_relations = state.task_map.n_relations
    dim = state.encoder.dim

    head_rng = RngState(state.seed).spawn(f"task{t}-heads")
    if state.relation_head is None:
        state.relation_head = new_head(2 * dim, total_relations, head_rng,
                                       hidden_dim=cfg.model.head_hidden)
        state.task_head = new_head(dim, total_relations, head_rng,
                                   hidden_dim=cfg.model.head_hidden)
    else:
        expand_head(state.relation_head, len(relations), head_rng)
        expand_head(state.task_head, len(relations), head_rng)

    # stage 1: pool + classifier on current data, encoder frozen throughout
    pool_rng = RngState(state.seed).spawn(f"task{t}-pool")
    pool = PromptPool(
        task_id=t, pool_size=cfg.model.pool_size, top_k=cfg.model.top_k, dim=dim,
        rng=pool_rng, prompt_length=cfg.model.prompt_length,
        surrogate_weight=cfg.model.surrogate_weight, relation_ids=relations,
    )
    queries = [encode_query(s, state.encoder) for s in task_data.train]
    train_pool(pool, task_data.train, state.encoder, state.relation_head,
               lr=cfg.training.pool_lr, epochs=cfg.training.pool_epochs,
               rng=RngState(state.seed).spawn(f"task{t}-pool-train"),
               batch_size=cfg.training.pool_batch_size,
               optimizer=cfg.training.pool_optimizer, queries=queries)
    pool.freeze()
    state.pools.append(pool)
    state.pool_checksums.append(pool_checksum(pool))

    # stage 2: fit per-relation generative models on this task's latents
    fit_rng = RngState(state.seed).spawn(f"task{t}-fit")
    by_relation = {r: [] for r in relations}
    for s, q in zip(task_data.train, queries):
        by_relation[s.label].append((s, q))
    for r in relations:
        qs = np.stack([q for _, q in by_relation[r]])
        zs = np.stack([
            encode_prompted(s, state.encoder,
                            [pool.prompts[i] for i in select(pool, q).indices])
            for s, q in by_relation[r]
        ])
        g_q = fit_mixture(qs, cfg.replay.n_components, fit_rng, ridge=cfg.replay.ridge,
                          diagonal=cfg.replay.diagonal_covariance)
        g_z = fit_mixture(zs, cfg.replay.n_components, fit_rng, ridge=cfg.replay.ridge,
                          diagonal=cfg.replay.diagonal_covariance)
        state.store.add(r, g_q, g_z)

    # stage 3: replay-retrain both heads over every relation seen so far
    replay_rng = RngState(state.seed).spawn(f"task{t}-replay")
    tr = cfg.training
    if not cfg.mode.no_replay:
        if not tr.warm_start_heads:
            state.relation_head = new_head(2 * dim, total_relations, head_rng,
                                           hidden_dim=cfg.model.head_hidden)
            state.task_head = new_head(dim, total_relations, head_rng,
                                       hidden_dim=cfg.model.head_hidden)
        train_relation_classifier(state.relation_head, state.store,
                                  cfg.replay.samples_per_relation,
                                  tr.classifier_epochs, tr.classifier_lr, replay_rng,
                                  batch_size=tr.classifier_batch_size,
                                  optimizer=tr.classifier_optimizer)
        train_task_predictor(state.task_head, state.store, state.task_map,
                             cfg.replay.samples_per_relation,
                             tr.classifier_epochs, tr.classifier_lr, replay_rng,
                             batch_size=tr.classifier_batch_size,
                             optimizer=tr.classifier_optimizer)
    else:
        # ablation: no replay retraining at all; the relation head keeps its
        # pool-training weights and the task predictor sees only current data
        labels = np.array([s.label for s in task_data.train])
        train_head_on(state.task_head, np.stack(queries), labels,
                      tr.classifier_epochs, tr.classifier_lr, replay_rng,
                      batch_size=tr.classifier_batch_size,
                      optimizer=tr.classifier_optimizer)

    state.eval_splits.append(task_data.test)
    report = _evaluate_splits(state, state.eval_splits,
                              task_incremental=cfg.mode.task_incremental)
    report.wall_clock_seconds = time.perf_counter() - started
    state.history.append(report)
    return state


def infer(state, x, true_task=None):
    """(task, relation) prediction for one sequence; no state mutation."""
    if state.n_tasks_trained == 0:
        raise InvalidArgumentError("no tasks trained yet")
    q = encode_query(x, state.encoder)
    if true_task is not None:
        t_hat = int(true_task)
    elif state.n_tasks_trained == 1:
        t_hat = 0
    else:
        t_hat = predict_task(state.task_head, state.task_map, q)
    pool = state.pools[t_hat]
    sel = select(pool, q)
    z = encode_prompted(x, state.encoder, [pool.prompts[i] for i in sel.indices])
    return t_hat, classify_relation(state.relation_head, z)


def _evaluate_splits(state, splits, task_incremental=False):
    per_acc, per_prec, sizes = [], [], []
    for task_id, split in enumerate(splits):
        rel_hits = 0
        task_hits = 0
        for s in split:
            t_hat, r_hat = infer(state, s,
                                 true_task=task_id if task_incremental else None)
            rel_hits += int(r_hat == s.label)
            task_hits += int(t_hat == task_id)
        n = len(split)
        per_acc.append(rel_hits / n)
        per_prec.append(task_hits / n)
        sizes.append(n)
    total = sum(sizes)
    weighted = sum(a * n for a, n in zip(per_acc, sizes)) / total
    return StageReport(
        stage=len(splits), per_task_accuracy=per_acc, task_precision=per_prec,
        test_sizes=sizes, average_accuracy=weighted,
        average_accuracy_unweighted=float(np.mean(per_acc)),
    )


def evaluate(state, stream, upto_stage, task_incremental=False):
    """Accuracy and routing precision over test splits of tasks 1..upto_stage."""
    if upto_stage > state.n_tasks_trained:
        raise InvalidArgumentError(
            f"cannot evaluate stage {upto_stage}; only {state.n_tasks_trained} trained")
    splits = [stream.tasks[j].test for j in range(upto_stage)]
    return _evaluate_splits(state, splits, task_incremental=task_incremental)


def run_stream(cfg, seed, stream=None):
    """Full continual run over a task stream; returns the final state."""
    cfg.validate()
    if stream is None:
        stream = build_stream(cfg, seed)
    state = init_state_for_stream(cfg, seed, stream)
    for task_data in stream.tasks:
        train_task(state, task_data)
    violations = state.frozen_contract_violations()
    if violations:
        raise InvalidArgumentError("; ".join(violations))
    return state


# -- ablation grid ------------------------------------------------------------

def apply_overrides(cfg, overrides):
    """New RunConfig with {section.key: value} overrides applied."""
    import copy

    out = copy.deepcopy(cfg)
    for dotted, value in overrides.items():
        section, key = dotted.split(".", 1)
        block = getattr(out, section)
        if not hasattr(block, key):
            raise InvalidArgumentError(f"unknown config field {dotted!r}")
        setattr(block, key, value)
    return out.validate()


def run_ablation(cfg, grid):
    """Run every grid point across the configured seeds.

    grid: list of (label, overrides) pairs. Returns one result row per point
    with per-stage average accuracy (mean across seeds) plus final per-task
    accuracy, mirroring stage-table layouts.
    """
    if not grid:
        raise InvalidArgumentError("empty ablation grid")
    rows = []
    for label, overrides in grid:
        point_cfg = apply_overrides(cfg, overrides)
        per_seed_stage_avgs = []
        per_seed_final_tasks = []
        for seed in point_cfg.training.seeds:
            state = run_stream(point_cfg, seed)
            per_seed_stage_avgs.append([r.average_accuracy for r in state.history])
            per_seed_final_tasks.append(state.history[-1].per_task_accuracy)
        rows.append({
            "label": label,
            "overrides": {k: v for k, v in overrides.items()},
            "stage_average_accuracy": list(np.mean(per_seed_stage_avgs, axis=0)),
            "final_per_task_accuracy": list(np.mean(per_seed_final_tasks, axis=0)),
            "seeds": list(point_cfg.training.seeds),
        })
    return rows


# -- state persistence ---------------------------------------------------------

def save_state(state, path):
    from dataclasses import asdict

    meta = {
        "seed": state.seed,
        "encoder": {"vocab_size": state.encoder.vocab_size, "dim": state.encoder.dim,
                    "n_heads": state.encoder.n_heads, "n_layers": state.encoder.n_layers,
                    "max_len": state.encoder.max_len, "ffn_hidden": state.encoder.ffn_hidden,
                    "query_pooling": state.encoder.query_pooling,
                    "prefix_layers": list(state.encoder.prefix_layers)},
        "pools": [{"task_id": p.task_id, "pool_size": p.pool_size, "top_k": p.top_k,
                   "dim": p.dim, "prompt_length": p.prompt_length,
                   "surrogate_weight": p.surrogate_weight,
                   "relation_ids": list(p.relation_ids) if p.relation_ids else None}
                  for p in state.pools],
        "store": {"relations": state.store.relations(), "ridge": state.config.replay.ridge},
        "heads": {"relation": {"input_dim": state.relation_head.input_dim,
                               "hidden_dim": state.relation_head.hidden_dim,
                               "n_out": state.relation_head.n_out},
                  "task": {"input_dim": state.task_head.input_dim,
                           "hidden_dim": state.task_head.hidden_dim,
                           "n_out": state.task_head.n_out}},
        "task_map": state.task_map.to_dict(),
        "history": [
            {k: v for k, v in asdict(r).items() if k != "wall_clock_seconds"}
            for r in state.history
        ],
        "encoder_checksum": state.encoder_checksum,
        "pool_checksums": state.pool_checksums,
    }
    arrays = [(f"encoder.{n}", a) for n, a in state.encoder.arrays()]
    for i, p in enumerate(state.pools):
        arrays += [(f"pool{i}.{n}", a) for n, a in p.arrays()]
    from .serialization import _mixture_arrays

    for r in state.store.relations():
        arrays += list(_mixture_arrays(f"store.r{r}.q", state.store.query_model(r)))
        arrays += list(_mixture_arrays(f"store.r{r}.z", state.store.prompted_model(r)))
    arrays += [(f"relation_head.{n}", a) for n, a in state.relation_head.arrays()]
    arrays += [(f"task_head.{n}", a) for n, a in state.task_head.arrays()]
    write_blob(path, "state", meta, arrays)


def load_state(path, cfg):
    from .attention import EncoderParams
    from .heads import ClassifierHead
    from .prompt_pool import PromptPool
    from .serialization import _mixture_from

    _, meta, arrays = read_blob(path, expect_kind="state")
    em = meta["encoder"]
    encoder = EncoderParams(em["vocab_size"], em["dim"], em["n_heads"], em["n_layers"],
                            em["max_len"], RngState(0), ffn_hidden=em["ffn_hidden"],
                            query_pooling=em["query_pooling"],
                            prefix_layers=tuple(em["prefix_layers"]))
    for name, arr in encoder.arrays():
        arr[...] = arrays[f"encoder.{name}"]
    encoder.freeze()

    state = ContinualState(config=cfg, seed=meta["seed"], encoder=encoder,
                           encoder_checksum=meta["encoder_checksum"])
    for i, pm in enumerate(meta["pools"]):
        pool = PromptPool(pm["task_id"], pm["pool_size"], pm["top_k"], pm["dim"],
                          RngState(0), prompt_length=pm["prompt_length"],
                          surrogate_weight=pm["surrogate_weight"],
                          relation_ids=pm["relation_ids"])
        for name, arr in pool.arrays():
            arr[...] = arrays[f"pool{i}.{name}"]
        pool.freeze()
        state.pools.append(pool)
    state.pool_checksums = list(meta["pool_checksums"])

    ridge_meta = {"ridge": meta["store"]["ridge"]}
    for r in meta["store"]["relations"]:
        state.store.add(r, _mixture_from(f"store.r{r}.q", ridge_meta, arrays),
                        _mixture_from(f"store.r{r}.z", ridge_meta, arrays))

    state.task_map = RelationTaskMap.from_dict(meta["task_map"])
    for attr, key in (("relation_head", "relation"), ("task_head", "task")):
        hm = meta["heads"][key]
        head = ClassifierHead(hm["input_dim"], hm["n_out"], RngState(0),
                              hidden_dim=hm["hidden_dim"])
        for name in ("w1", "b1", "w2", "b2"):
            setattr(head, name, arrays[f"{attr}.{name}"].copy())
        setattr(state, attr, head)
    state.history = [StageReport(**{**r, "wall_clock_seconds": 0.0})
                     for r in meta["history"]]
    return state

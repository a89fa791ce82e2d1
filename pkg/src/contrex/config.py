"""Run configuration: a small INI schema with defaults and validation.

One committed default file documents every knob; tuning-grid alternatives are
kept as comments next to the fields they override. Configs round-trip through
save/load losslessly (floats are written with full repr precision).
"""

import configparser
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class DatasetSection:
    source: str = "synthetic"          # synthetic | fewrel
    fewrel_path: str = ""
    n_tasks: int = 5
    relations_per_task: int = 4
    train_per_relation: int = 100
    test_per_relation: int = 40
    vocab_size: int = 120
    seq_len: int = 16
    context_overlap: float = 0.25
    imbalanced: bool = False


@dataclass
class ModelSection:
    dim: int = 32
    n_heads: int = 2
    n_layers: int = 2
    ffn_hidden: int = 0                # 0 -> 4 * dim
    query_pooling: str = "sentinel"    # sentinel | mean
    pool_size: int = 10
    top_k: int = 4
    prompt_length: int = 1
    surrogate_weight: float = 0.1
    head_hidden: int = 64


@dataclass
class ReplaySection:
    n_components: int = 1              # grid: 1, 3, 5
    ridge: float = 1e-4
    samples_per_relation: int = 200
    diagonal_covariance: bool = False


@dataclass
class TrainingSection:
    pool_epochs: int = 20              # grid: 10, 20, 50
    pool_lr: float = 0.2               # pre-trained-encoder grid: 2e-5, 5e-5, 1e-4
    pool_batch_size: int = 16
    pool_optimizer: str = "sgd"        # sgd | adam
    classifier_epochs: int = 300       # grid: 100, 300, 500
    classifier_lr: float = 0.05
    classifier_batch_size: int = 64
    classifier_optimizer: str = "sgd"
    warm_start_heads: bool = False
    seed: int = 1
    seeds: tuple = (1, 2, 3, 4, 5)


@dataclass
class ModeSection:
    task_incremental: bool = False
    no_replay: bool = False


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    training: TrainingSection = field(default_factory=TrainingSection)
    mode: ModeSection = field(default_factory=ModeSection)

    def validate(self):
        d, m, r, t = self.dataset, self.model, self.replay, self.training
        if d.source not in ("synthetic", "fewrel"):
            raise ConfigError(f"dataset.source must be synthetic or fewrel, got {d.source!r}")
        if d.source == "fewrel" and not d.fewrel_path:
            raise ConfigError("dataset.fewrel_path required when source is fewrel")
        for name, value in (("n_tasks", d.n_tasks), ("relations_per_task", d.relations_per_task),
                            ("train_per_relation", d.train_per_relation),
                            ("test_per_relation", d.test_per_relation),
                            ("vocab_size", d.vocab_size), ("seq_len", d.seq_len)):
            if value < 1:
                raise ConfigError(f"dataset.{name} must be >= 1")
        if not 0.0 <= d.context_overlap <= 1.0:
            raise ConfigError("dataset.context_overlap must lie in [0, 1]")
        if m.dim % m.n_heads != 0:
            raise ConfigError(f"model.dim {m.dim} not divisible by n_heads {m.n_heads}")
        if not 1 <= m.top_k <= m.pool_size:
            raise ConfigError("model.top_k must lie in [1, pool_size]")
        if m.prompt_length < 1:
            raise ConfigError("model.prompt_length must be >= 1")
        if m.query_pooling not in ("sentinel", "mean"):
            raise ConfigError(f"unknown model.query_pooling {m.query_pooling!r}")
        if r.n_components < 1:
            raise ConfigError("replay.n_components must be >= 1")
        if r.ridge <= 0:
            raise ConfigError("replay.ridge must be positive")
        if r.samples_per_relation < 1:
            raise ConfigError("replay.samples_per_relation must be >= 1")
        for opt in (t.pool_optimizer, t.classifier_optimizer):
            if opt not in ("sgd", "adam"):
                raise ConfigError(f"unknown optimizer {opt!r}")
        if not self.training.seeds:
            raise ConfigError("training.seeds must not be empty")
        return self


_SECTIONS = ("dataset", "model", "replay", "training", "mode")


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw, template):
    raw = raw.strip()
    if isinstance(template, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(template, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def save_config(cfg, path):
    parser = configparser.ConfigParser()
    for section in _SECTIONS:
        block = getattr(cfg, section)
        parser[section] = {f.name: _format_value(getattr(block, f.name))
                           for f in fields(block)}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"{path}: config file not found or unreadable")
    cfg = RunConfig()
    for section in _SECTIONS:
        if not parser.has_section(section):
            continue
        block = getattr(cfg, section)
        known = {f.name: getattr(block, f.name) for f in fields(block)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{path}: unknown option {section}.{key}")
            try:
                setattr(block, key, _parse_value(raw, known[key]))
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {exc}") from exc
    return cfg.validate()


DEFAULT_CONFIG_TEMPLATE = """\
# contrex run configuration
# Every option shows its default; commented alternatives are the documented
# tuning grids.

[dataset]
source = synthetic            # synthetic | fewrel
fewrel_path =
n_tasks = 5
relations_per_task = 4
train_per_relation = 100
test_per_relation = 40
vocab_size = 120
seq_len = 16
context_overlap = 0.25
imbalanced = false

[model]
dim = 32
n_heads = 2
n_layers = 2
ffn_hidden = 0                # 0 selects 4 * dim
query_pooling = sentinel      # sentinel | mean
pool_size = 10
top_k = 4
# experts per prompt; ablation grid pairs (prompt_length, top_k):
# (8,1), (4,2), (2,4), (1,8)
prompt_length = 1
surrogate_weight = 0.1
head_hidden = 64

[replay]
n_components = 1              # grid: 1, 3, 5
ridge = 0.0001
samples_per_relation = 200
diagonal_covariance = false

[training]
pool_epochs = 20              # grid: 10, 20, 50
pool_lr = 0.2                 # pre-trained-encoder grid: 2e-05, 5e-05, 0.0001
pool_batch_size = 16
pool_optimizer = sgd          # sgd | adam
classifier_epochs = 300       # grid: 100, 300, 500
classifier_lr = 0.05
classifier_batch_size = 64
classifier_optimizer = sgd
warm_start_heads = false
seed = 1
seeds = 1,2,3,4,5

[mode]
task_incremental = false
no_replay = false
"""


def write_default_config(path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DEFAULT_CONFIG_TEMPLATE)


def stream_config_of(cfg):
    from .datasets import StreamConfig

    d = cfg.dataset
    return StreamConfig(
        n_tasks=d.n_tasks, relations_per_task=d.relations_per_task,
        train_per_relation=d.train_per_relation, test_per_relation=d.test_per_relation,
        vocab_size=d.vocab_size, seq_len=d.seq_len,
        context_overlap=d.context_overlap, imbalanced=d.imbalanced,
    )

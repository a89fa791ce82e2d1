"""Command-line harness.

Subcommands: train, eval, ablate, verify, gen-data, ingest-fewrel, report.
Exit codes are stable: 0 success, 1 property-check failure, 2 configuration
error, 3 numeric failure. CONTREX_OUT_DIR overrides the default output
directory. Report paths write CSV + JSON plus rendered PNG figures; the
delimited outputs are byte-stable for a given config and seed.
"""

import argparse
import json
import os
import sys

from .config import load_config, save_config, write_default_config
from .errors import ConfigError, ContrexError, InvalidArgumentError, NumericError, ParseError

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_ERROR = 3

EXPERT_GRID = ((8, 1), (4, 2), (2, 4), (1, 8))  # (prompt_length, top_k) pairs


def _out_dir(args):
    out = getattr(args, "out", None) or os.environ.get("CONTREX_OUT_DIR") or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.training.seed = args.seed
    return cfg


def _write_effective_config(cfg, out):
    path = os.path.join(out, "effective_config.ini")
    save_config(cfg, path)
    return path


def cmd_train(args):
    from .harness import build_stream, run_stream, save_state
    from .reporting import render_stage_figure, render_task_precision_figure, write_stage_reports

    cfg = _load_config(args)
    out = _out_dir(args)
    seed = cfg.training.seed
    stream = build_stream(cfg, seed)
    state = run_stream(cfg, seed, stream=stream)
    state_path = os.path.join(out, "state.bin")
    save_state(state, state_path)
    csv_path, json_path = write_stage_reports(state.history, out)
    _write_effective_config(cfg, out)
    wrote = [state_path, csv_path, json_path]
    if not args.no_plots:
        fig_dir = os.path.join(out, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        wrote.append(render_stage_figure(state.history, os.path.join(fig_dir, "accuracy.png")))
        wrote.append(render_task_precision_figure(
            state.history, os.path.join(fig_dir, "task_precision.png")))
    final = state.history[-1]
    print(f"trained {state.n_tasks_trained} tasks (seed {seed}); "
          f"final average accuracy {final.average_accuracy:.4f}")
    for p in wrote:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_eval(args):
    from .harness import build_stream, evaluate, load_state
    from .reporting import render_stage_figure, write_stage_reports

    cfg = _load_config(args)
    out = _out_dir(args)
    state = load_state(args.state, cfg)
    stream = build_stream(cfg, state.seed)
    report = evaluate(state, stream, state.n_tasks_trained,
                      task_incremental=args.task_incremental)
    csv_path, json_path = write_stage_reports([report], out, basename="eval_report")
    _write_effective_config(cfg, out)
    if not args.no_plots:
        render_stage_figure([report], os.path.join(out, "eval_report.png"))
    print(f"stage {report.stage}: average accuracy {report.average_accuracy:.4f} "
          f"(unweighted {report.average_accuracy_unweighted:.4f})")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return EXIT_OK


def _parse_grid(args):
    if args.preset == "pool":
        return [("full", {}), ("single-prompt", {"model.pool_size": 1, "model.top_k": 1})]
    if args.preset == "experts":
        return [(f"L{l}-K{k}", {"model.prompt_length": l, "model.top_k": k})
                for l, k in EXPERT_GRID]
    if args.preset == "replay":
        return [("full", {}), ("no-replay", {"mode.no_replay": True})]
    if args.grid:
        try:
            spec = json.loads(args.grid)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--grid is not valid JSON: {exc}") from exc
        if not isinstance(spec, list) or not spec:
            raise ConfigError("--grid must be a non-empty JSON list")
        grid = []
        for i, entry in enumerate(spec):
            if not isinstance(entry, dict):
                raise ConfigError(f"--grid entry {i} must be an object")
            label = entry.pop("label", f"point-{i}")
            grid.append((label, entry))
        return grid
    raise ConfigError("ablate needs --preset or --grid")


def cmd_ablate(args):
    from .harness import run_ablation
    from .reporting import render_ablation_figure, write_ablation_reports

    cfg = _load_config(args)
    grid = _parse_grid(args)
    out = _out_dir(args)
    rows = run_ablation(cfg, grid)
    csv_path, json_path = write_ablation_reports(rows, out)
    _write_effective_config(cfg, out)
    wrote = [csv_path, json_path]
    if not args.no_plots:
        wrote.append(render_ablation_figure(rows, os.path.join(out, "ablation.png")))
    for row in rows:
        stages = " ".join(f"{a:.3f}" for a in row["stage_average_accuracy"])
        print(f"{row['label']}: {stages}")
    for p in wrote:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import dump_failures, format_table, run_all

    results = run_all()
    print(format_table(results))
    if all(r.passed for r in results):
        return EXIT_OK
    out = _out_dir(args)
    path = dump_failures(results, os.path.join(out, "verify_failures.json"))
    print(f"failing cases serialized to {path}", file=sys.stderr)
    return EXIT_PROPERTY_FAILURE


def cmd_gen_data(args):
    from .config import stream_config_of
    from .datasets import export_jsonl, generate_stream

    cfg = _load_config(args)
    stream = generate_stream(stream_config_of(cfg), cfg.training.seed)
    out = _out_dir(args)
    path = os.path.join(out, args.name)
    export_jsonl(stream, path)
    _write_effective_config(cfg, out)
    total = sum(len(t.train) + len(t.test) for t in stream.tasks)
    print(f"generated {stream.n_tasks} tasks, {total} sequences")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ingest_fewrel(args):
    from .datasets import export_jsonl, ingest_fewrel_json

    stream = ingest_fewrel_json(args.json, args.tasks, args.seed)
    out = _out_dir(args)
    path = os.path.join(out, args.name)
    export_jsonl(stream, path)
    rels = sum(len(t.relations) for t in stream.tasks)
    total = sum(len(t.train) + len(t.test) for t in stream.tasks)
    print(f"ingested {rels} relations into {stream.n_tasks} tasks, {total} sequences")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args):
    from .harness import StageReport
    from .reporting import render_stage_figure, render_task_precision_figure

    src = os.path.join(args.run, "stage_reports.json")
    if not os.path.exists(src):
        raise ConfigError(f"no stage_reports.json under {args.run}")
    with open(src, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    reports = [StageReport(**{**r, "wall_clock_seconds": 0.0}) for r in payload]
    fig_dir = os.path.join(args.run, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    a = render_stage_figure(reports, os.path.join(fig_dir, "accuracy.png"))
    b = render_task_precision_figure(reports, os.path.join(fig_dir, "task_precision.png"))
    print(f"wrote {a}")
    print(f"wrote {b}")
    return EXIT_OK


def cmd_init_config(args):
    write_default_config(args.path)
    print(f"wrote {args.path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="contrex",
                                     description="Continual relation extraction harness")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the full continual stream")
    train.add_argument("--config", required=True)
    train.add_argument("--out")
    train.add_argument("--seed", type=int)
    train.add_argument("--no-plots", action="store_true")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a saved state")
    ev.add_argument("--state", required=True)
    ev.add_argument("--config", required=True)
    ev.add_argument("--out")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--task-incremental", action="store_true")
    ev.add_argument("--no-plots", action="store_true")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="run an ablation grid")
    ab.add_argument("--config", required=True)
    ab.add_argument("--out")
    ab.add_argument("--seed", type=int)
    ab.add_argument("--preset", choices=("pool", "experts", "replay"))
    ab.add_argument("--grid", help='JSON list, e.g. \'[{"label":"a","model.top_k":2}]\'')
    ab.add_argument("--no-plots", action="store_true")
    ab.set_defaults(func=cmd_ablate)

    ver = sub.add_parser("verify", help="run the property-check gate")
    ver.add_argument("--out")
    ver.set_defaults(func=cmd_verify)

    gen = sub.add_parser("gen-data", help="emit a synthetic stream as JSONL")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--name", default="stream.jsonl")
    gen.set_defaults(func=cmd_gen_data)

    ing = sub.add_parser("ingest-fewrel", help="convert FewRel-format JSON to a stream")
    ing.add_argument("--json", required=True)
    ing.add_argument("--tasks", type=int, default=10)
    ing.add_argument("--seed", type=int, default=1)
    ing.add_argument("--out")
    ing.add_argument("--name", default="fewrel_stream.jsonl")
    ing.set_defaults(func=cmd_ingest_fewrel)

    rep = sub.add_parser("report", help="re-render figures for an existing run")
    rep.add_argument("--run", required=True)
    rep.set_defaults(func=cmd_report)

    init = sub.add_parser("init-config", help="write the documented default config")
    init.add_argument("path")
    init.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (NumericError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC_ERROR
    except ContrexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROPERTY_FAILURE


if __name__ == "__main__":
    sys.exit(main())

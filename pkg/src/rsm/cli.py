"""Command-line entry points.

Subcommands cover the experiment workflow end to end: ``generate``
writes datasets as JSON lines, ``train`` fits a model and saves it as a
JSON bundle, ``eval`` scores a saved model, ``experiment`` runs the
search + repeats protocol into a results CSV, and ``separability``
prints the last-symbol linear-probe report for a reservoir.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, stack_machine, tasks


def _add_task_argument(p):
    p.add_argument("--task", required=True, choices=tasks.TASK_NAMES)
    p.add_argument("--seed", type=int, default=0)


def _dataset(args) -> tasks.TaskDataset:
    return tasks.make_task(args.task, seed=args.seed)


def cmd_generate(args) -> int:
    dataset = _dataset(args)
    with open(args.out, "w") as fh:
        if args.split == "train":
            for ann in dataset.train:
                fh.write(json.dumps(ann.to_dict()) + "\n")
        else:
            for x, y in zip(dataset.test_inputs, dataset.test_targets):
                fh.write(json.dumps({"x": x.tolist(), "Y": y.tolist()}) + "\n")
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = _dataset(args)
    kind, arch = harness.parse_model_name(args.model)
    params = harness.default_params(kind, arch, args.task, args.neurons)
    if args.params:
        params.update(json.loads(args.params))
    model, seconds = harness.train_model(dataset, args.model, args.neurons, params,
                                         seed=args.seed)
    harness.save_model(model, dataset.table, args.out)
    print(f"trained {args.model} on {args.task} in {seconds:.2f}s -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, _ = harness.load_model(args.model_file)
    dataset = _dataset(args)
    score = harness.evaluate_model(model, dataset)
    print(json.dumps({"task": args.task, "seed": args.seed, "mae": score}))
    return 0


def cmd_experiment(args) -> int:
    cfg = harness.ExperimentConfig(
        task=args.task, model=args.model, neurons=args.neurons, repeats=args.repeats,
        search_budget=args.search_budget, validation_sets=args.validation_sets,
        seed=args.seed,
        hyperparameters=json.loads(args.params) if args.params else None)
    rows = harness.run_experiment(cfg)
    harness.write_results_csv(rows, args.out)
    scores = [row.mae for row in rows]
    print(f"{cfg.model} on {cfg.task}: mean mae {sum(scores) / len(scores):.4f} "
          f"over {len(rows)} repeats -> {args.out}")
    return 0


def cmd_separability(args) -> int:
    dataset = tasks.make_task(args.task, seed=args.seed) if args.task else None
    table = dataset.table if dataset else tasks.language_spec("anbn").automaton.table
    params = harness.default_params(args.kind, "RSM", args.task or "anbn", args.neurons)
    if args.params:
        params.update(json.loads(args.params))
    reservoir = harness.make_reservoir(args.kind, args.neurons, table.n, params,
                                       seed=args.seed)
    report = harness.separability_report(reservoir, table, args.max_len,
                                         seed=args.seed, pca_path=args.pca_out)
    print(json.dumps(report, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rsm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a dataset as JSON lines")
    _add_task_argument(p)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="fit a model and save the bundle")
    _add_task_argument(p)
    p.add_argument("--model", required=True)
    p.add_argument("--neurons", type=int, default=256)
    p.add_argument("--params", help="JSON dict of hyperparameter overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a saved model on a dataset")
    _add_task_argument(p)
    p.add_argument("--model-file", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("experiment", help="search, train, and evaluate over repeats")
    _add_task_argument(p)
    p.add_argument("--model", required=True)
    p.add_argument("--neurons", type=int, default=256)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--search-budget", type=int, default=20)
    p.add_argument("--validation-sets", type=int, default=3)
    p.add_argument("--params", help="JSON dict; skips the search entirely")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("separability", help="last-symbol linear probe for a reservoir")
    p.add_argument("--kind", choices=harness.RESERVOIR_KINDS, default="crj")
    p.add_argument("--neurons", type=int, default=5)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--task", choices=tasks.TASK_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON dict of reservoir parameter overrides")
    p.add_argument("--pca-out", help="optional CSV path for a 2-component projection")
    p.set_defaults(fn=cmd_separability)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: ``train``, ``consensus``, ``figure1``, ``gen-data``,
``check-grad``. Exit status: 0 success, 1 usage error, 2 dataset ingestion
error, 3 divergence, 4 failed gradient check.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from .baselines import EasgdConfig
from .datagen import KINDS as DATA_KINDS, gen_data, generate
from .errors import ConfigError, DivergenceError, DomainError, IngestionError
from .harness import (
    ALGOS,
    ScheduleMode,
    config_manifest,
    consensus_decay_experiment,
    figure1_protocol,
    run_experiment,
)
from .numeric_core import RandomSource
from .objectives import OBJECTIVE_KINDS, Dataset, check_gradient, load_csv_dataset, make_objective
from .protocol import GossipConfig

EXIT_OK, EXIT_USAGE, EXIT_INGEST, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3, 4
GRAD_TOLERANCE = 1e-5

# published defaults
DEFAULT_WORKERS = 8
DEFAULT_P = 0.02
DEFAULT_ETA = 0.01
DEFAULT_BATCH = 128
DEFAULT_DECAY = 1e-4
DEFAULT_MOMENTUM = 0.99
DEFAULT_ELASTIC = 0.887


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _probability(s):
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must fit in 64 unsigned bits")
    return v


def _add_objective_flags(p, default_kind="mlp"):
    p.add_argument("--objective", choices=OBJECTIVE_KINDS, default=default_kind)
    p.add_argument("--dataset", type=Path, help="numeric CSV with a header row")
    p.add_argument("--label-column", default=None, help="header name or 0-based index (default: label)")
    p.add_argument("--dim", type=_positive_int, default=None, help="quadratic dimension (default 50)")
    p.add_argument("--hidden", type=_positive_int, default=16)
    p.add_argument("--weight-decay", type=float, default=DEFAULT_DECAY)


def _add_run_flags(p):
    p.add_argument("--workers", type=_positive_int, default=DEFAULT_WORKERS)
    p.add_argument("--eta", type=_positive_float, default=DEFAULT_ETA)
    p.add_argument("--batch", type=_positive_int, default=DEFAULT_BATCH)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--mode", choices=("simulation", "threaded"), default="simulation")
    p.add_argument("--order", choices=("random", "round-robin"), default="random")
    p.add_argument("--message-cost", type=float, default=0.0,
                   help="simulation only: virtual time per message, in gradient steps")
    p.add_argument("--record-every", type=_positive_int, default=10)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--elastic-alpha", type=float, default=None)


def build_parser():
    parser = _Parser(prog="gosgd", description="Gossip SGD and baselines.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run one algorithm and write a metrics CSV")
    p.add_argument("--algo", choices=ALGOS, default="gosgd")
    p.add_argument("--p", type=_probability, default=None)
    p.add_argument("--tau", type=_positive_int, default=None)
    p.add_argument("--iterations", type=_positive_int, default=1000)
    p.add_argument("--out", type=Path, default=Path("metrics.csv"))
    _add_run_flags(p)
    _add_objective_flags(p)

    p = sub.add_parser("consensus", help="mixing-only consensus decay measurement")
    p.add_argument("--workers", type=_positive_int, default=DEFAULT_WORKERS)
    p.add_argument("--p", type=_probability, default=1.0)
    p.add_argument("--dim", type=_positive_int, default=100)
    p.add_argument("--spread", type=_positive_float, default=1.0)
    p.add_argument("--max-rounds", type=_positive_int, default=2000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, default=None, help="optional CSV of the decay trace")

    p = sub.add_parser("figure1", help="GoSGD vs EASGD vs naive on one objective")
    p.add_argument("--p-list", default="1,0.02", help="comma-separated exchange probabilities")
    p.add_argument("--algos", default=",".join(ALGOS))
    p.add_argument("--iterations", type=_positive_int, default=20000)
    p.add_argument("--out-dir", type=Path, default=Path("figure1"))
    _add_run_flags(p)
    _add_objective_flags(p)

    p = sub.add_parser("gen-data", help="write a synthetic 2-D dataset")
    p.add_argument("--kind", choices=DATA_KINDS, default="two-moons")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("check-grad", help="finite-difference gradient check")
    p.add_argument("--probes", type=_positive_int, default=20)
    p.add_argument("--seed", type=_seed, default=0)
    _add_objective_flags(p)
    return parser


def _objective(args, allow_synthetic=False):
    if args.objective == "quadratic":
        if args.dataset is not None or args.label_column is not None:
            raise UsageError("--dataset/--label-column make no sense with the quadratic objective")
        dim = args.dim or 50
        target = RandomSource(args.seed, 2**63 + 2).normal(dim)
        return make_objective("quadratic", target=target, weight_decay=args.weight_decay)
    if args.dim is not None:
        raise UsageError("--dim only applies to the quadratic objective")
    if args.dataset is None:
        if not allow_synthetic:
            raise UsageError(f"--dataset is required for the {args.objective} objective")
        kind = "two-cluster" if args.objective == "logistic" else "two-moons"
        X, y = generate(kind, 200, args.seed)
        dataset = Dataset(X, y)
    else:
        dataset = load_csv_dataset(args.dataset, args.label_column or "label")
    return make_objective(args.objective, dataset=dataset, hidden=args.hidden,
                          weight_decay=args.weight_decay)


def _write_manifest(target, **kw):
    path = Path(str(target) + ".config.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = config_manifest(**kw)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")
    return path


def _objective_manifest(args):
    return {
        "kind": args.objective,
        "dataset": str(args.dataset) if args.dataset else None,
        "label_column": args.label_column or ("label" if args.dataset else None),
        "dim": args.dim or (50 if args.objective == "quadratic" else None),
        "hidden": args.hidden if args.objective == "mlp" else None,
        "weight_decay": args.weight_decay,
    }


def _mode(args):
    if args.mode == "threaded" and args.message_cost:
        raise UsageError("--message-cost only applies to simulation mode")
    return ScheduleMode(args.mode, args.order, message_cost=args.message_cost)


def cmd_train(args):
    easgd_only = {"--tau": args.tau, "--momentum": args.momentum, "--elastic-alpha": args.elastic_alpha}
    if args.algo != "easgd":
        given = [k for k, v in easgd_only.items() if v is not None]
        if given:
            raise UsageError(f"{', '.join(given)} only apply to --algo easgd")
    if args.algo == "naive" and args.p is not None:
        raise UsageError("--p does not apply to --algo naive")
    if args.algo == "easgd" and args.p is not None and args.tau is not None:
        raise UsageError("give either --p or --tau for easgd, not both")

    obj = _objective(args)
    common = dict(M=args.workers, eta=args.eta, batch_size=args.batch,
                  iterations=args.iterations, seed=args.seed)
    if args.algo == "easgd":
        p = args.p if args.p is not None else (1.0 / args.tau if args.tau else DEFAULT_P)
        cfg = EasgdConfig(
            p=p, tau=args.tau,
            momentum=DEFAULT_MOMENTUM if args.momentum is None else args.momentum,
            elastic_alpha=DEFAULT_ELASTIC if args.elastic_alpha is None else args.elastic_alpha,
            **common,
        )
    elif args.algo == "naive":
        cfg = GossipConfig(p=0.0, **common)
    else:
        cfg = GossipConfig(p=DEFAULT_P if args.p is None else args.p, **common)

    mode = _mode(args)
    _write_manifest(args.out, command="train", algo=args.algo, config=cfg, mode=mode,
                    objective=_objective_manifest(args), record_every=args.record_every,
                    out=str(args.out))
    result = run_experiment(args.algo, cfg, obj, mode, out=args.out, record_every=args.record_every)
    full = obj.loss(result.test_model, obj.full_batch())
    print(f"{args.algo}: final smoothed loss {result.final.loss_smooth50:.6g}, "
          f"test-model loss {full:.6g}, consensus {result.final.consensus_dist:.3g}, "
          f"messages {result.messages_sent} -> {args.out}")
    return EXIT_OK


def cmd_consensus(args):
    res = consensus_decay_experiment(M=args.workers, p=args.p, dim=args.dim,
                                     initial_spread=args.spread, seed=args.seed,
                                     max_rounds=args.max_rounds)
    if args.out is not None:
        _write_manifest(args.out, command="consensus", workers=args.workers, p=args.p,
                        dim=args.dim, spread=args.spread, seed=args.seed,
                        max_rounds=args.max_rounds)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["round", "mixing_updates", "consensus_dist"])
            for r, u, d in zip(res.rounds, res.updates, res.distances):
                wr.writerow([r, u, repr(float(d))])
    flag = " (short: fewer samples than requested)" if res.short else ""
    print(f"decay per mixing update {res.rate_per_update:.6g}, per iteration "
          f"{res.rate_per_iteration:.6g}, R^2 {res.r2:.6f} over {res.samples} samples{flag}")
    return EXIT_OK


def cmd_figure1(args):
    try:
        p_list = [float(v) for v in args.p_list.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --p-list {args.p_list!r}") from None
    if not p_list or not all(0 < v <= 1 for v in p_list):
        raise UsageError("--p-list needs probabilities in (0, 1]")
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    bad = [a for a in algos if a not in ALGOS]
    if bad or not algos:
        raise UsageError(f"unknown algorithms {bad}; choose from {ALGOS}")
    obj = _objective(args)
    mode = _mode(args)
    momentum = DEFAULT_MOMENTUM if args.momentum is None else args.momentum
    elastic = DEFAULT_ELASTIC if args.elastic_alpha is None else args.elastic_alpha
    _write_manifest(args.out_dir, command="figure1", workers=args.workers, p_list=p_list,
                    algos=algos, iterations=args.iterations, batch=args.batch, eta=args.eta,
                    seed=args.seed, mode=mode, momentum=momentum, elastic_alpha=elastic,
                    objective=_objective_manifest(args), record_every=args.record_every)
    results = figure1_protocol(obj, M=args.workers, p_list=p_list, algos=algos,
                               iterations=args.iterations, batch_size=args.batch, eta=args.eta,
                               seed=args.seed, out_dir=args.out_dir, mode=mode,
                               record_every=args.record_every, elastic_alpha=elastic,
                               momentum=momentum)
    for label, res in results.items():
        print(f"{label:>14}: smoothed loss {res.final.loss_smooth50:.6g}, "
              f"consensus {res.final.consensus_dist:.3g}")
    return EXIT_OK


def cmd_gen_data(args):
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    try:
        gen_data(args.kind, args.n, args.seed, args.out)
    except OSError as exc:
        print(f"gosgd: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_INGEST
    _write_manifest(args.out, command="gen-data", kind=args.kind, n=args.n, seed=args.seed)
    print(f"wrote {args.n} examples to {args.out}")
    return EXIT_OK


def cmd_check_grad(args):
    obj = _objective(args, allow_synthetic=True)
    worst = check_gradient(obj, RandomSource(args.seed, 0), probes=args.probes)
    print(f"{obj.kind}: max relative finite-difference error {worst:.3e}")
    return EXIT_OK if worst < GRAD_TOLERANCE else EXIT_CHECK_FAILED


COMMANDS = {
    "train": cmd_train,
    "consensus": cmd_consensus,
    "figure1": cmd_figure1,
    "gen-data": cmd_gen_data,
    "check-grad": cmd_check_grad,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gosgd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DomainError) as exc:
        print(f"gosgd: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestionError as exc:
        print(f"gosgd: cannot load dataset: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except DivergenceError as exc:
        print(f"gosgd: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

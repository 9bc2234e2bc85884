"""Command-line entry point: ``mtvrp <subcommand> ...``.

Exit codes: 0 success, 1 bad input or usage, 2 a solution failed
validation, 3 numeric failure (non-finite activations or loss).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .env import Trajectory, route_length, validate_solution
from .evaluation import InvalidSolution, evaluate, sweep_csv, sweep_p_test
from .instances import VARIANT_SETS, generate_batch, load_instances, parse_solomon, save_instances
from .layers import NumericFailure
from .oracle import oracle_optimal
from .policy import ModelConfig
from .trainer import TrainConfig, TrainingAborted, fit

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def read_instances(path):
    """JSON instance list, or a single Solomon-format text file."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith(("[", "{")):
        return load_instances(path)
    return [parse_solomon(text)]


def _instances(args):
    if args.instances:
        return read_instances(args.instances)
    if not args.variant:
        raise ValueError("give --instances FILE or --variant NAME")
    return generate_batch(args.variant, args.n, args.count, seed=args.seed)


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_source(p, count=100):
    p.add_argument("--instances", help="JSON instance file or Solomon text file")
    p.add_argument("--variant", help="generate instances of this variant instead")
    p.add_argument("--n", type=int, default=10, help="customers per generated instance")
    p.add_argument("--count", type=int, default=count)
    p.add_argument("--seed", type=int, default=0)


def cmd_generate(args):
    if args.variant_set:
        variants = [v.name() for v in VARIANT_SETS[args.variant_set]()]
    elif args.variant:
        variants = [args.variant]
    else:
        raise ValueError("give --variant or --variant-set")
    out = []
    for k, v in enumerate(variants):
        out.extend(generate_batch(v, args.n, args.count, seed=args.seed + k))
    save_instances(args.out, out)
    print(f"wrote {len(out)} instances to {args.out}")
    return EXIT_OK


def cmd_train(args):
    if args.variant:
        variants = (args.variant,)
    else:
        variants = tuple(v.name() for v in VARIANT_SETS[args.variant_set]())
    model = ModelConfig(
        dim=args.dim, heads=args.heads, hidden=4 * args.dim, encoder_layers=args.layers, single_branch=args.single_branch
    )
    cfg = TrainConfig(
        n_customers=args.n,
        batch_size=args.batch,
        epochs=args.epochs,
        instances_per_epoch=args.instances_per_epoch,
        lr=args.lr,
        milestones=tuple(args.milestones) if args.milestones is not None else tuple(m for m in (270, 295) if m < args.epochs),
        p_train=args.p_train,
        p_test=args.p_test,
        seed=args.seed,
        variants=variants,
        model=model,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))

    def progress(row):
        print(f"epoch {row['epoch']:>3}  loss {row['loss']:+.4f}  val_obj {row['val_obj']:.4f}  lr {row['lr']:.1e}")

    res = fit(cfg, out_dir=out, progress=progress)
    print(f"best epoch {res.best_epoch}  val_obj {res.best_val:.4f}  checkpoint {out / 'best.npz'}")
    return EXIT_OK


def _reference(args):
    return "oracle" if args.reference == "oracle" else args.reference


def cmd_eval(args):
    policy = load_checkpoint(args.checkpoint)
    report = evaluate(policy, _instances(args), _reference(args), args.p_test, args.seed)
    _emit(report.to_csv(), args.out)
    print(report.summary(), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_sweep(args):
    grid = [float(x) for x in args.grid.split(",")]
    policy = load_checkpoint(args.checkpoint)
    rows = sweep_p_test(policy, _instances(args), grid, _reference(args), args.seed, args.repeats)
    _emit(sweep_csv(rows), args.out)
    return EXIT_OK


def cmd_validate(args):
    instances = read_instances(args.instances)
    records = json.loads(Path(args.solutions).read_text())
    if isinstance(records, dict):
        records = [records]
    if len(records) != len(instances):
        raise ValueError(f"{len(records)} solutions for {len(instances)} instances")
    bad = 0
    for i, (inst, rec) in enumerate(zip(instances, records)):
        traj = Trajectory.from_dict(rec)
        verdict = validate_solution(traj, inst)
        if verdict.ok:
            print(f"{i}: ok  length {route_length(traj, inst):.6f}")
        else:
            bad += 1
            for v in verdict.violations:
                print(f"{i}: {v.rule} at step {v.step}: {v.detail}")
    return EXIT_INVALID if bad else EXIT_OK


def cmd_oracle(args):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance", "reference", "start", "sequence"])
    for i, inst in enumerate(_instances(args)):
        res = oracle_optimal(inst)
        w.writerow([i, repr(res.objective), res.trajectory.start_depot, " ".join(map(str, res.trajectory.actions))])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtvrp", description="Multi-task VRP policy: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="sample random instances to a JSON file")
    g.add_argument("--variant")
    g.add_argument("--variant-set", choices=sorted(VARIANT_SETS))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--count", type=int, default=100, help="instances per variant")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="REINFORCE training with checkpoints and metrics.csv")
    t.add_argument("--variant-set", choices=sorted(VARIANT_SETS), default="in16")
    t.add_argument("--variant", help="train on a single variant instead of a set")
    t.add_argument("--n", type=int, default=50)
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--instances-per-epoch", type=int, default=100_000)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--milestones", type=int, nargs="*")
    t.add_argument("--p-train", type=float, default=0.75)
    t.add_argument("--p-test", type=float, default=1.0)
    t.add_argument("--dim", type=int, default=128)
    t.add_argument("--heads", type=int, default=8)
    t.add_argument("--layers", type=int, default=6)
    t.add_argument("--single-branch", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "gap report of a checkpoint against a reference"),
        ("sweep", cmd_sweep, "gap and decode time over a grid of P_ts values"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        _add_source(e)
        e.add_argument("--reference", default="oracle", help="'oracle' or a CSV/JSON file of reference objectives")
        if name == "eval":
            e.add_argument("--p-test", type=float, default=1.0)
        else:
            e.add_argument("--grid", default="0,0.25,0.5,0.75,1")
            e.add_argument("--repeats", type=int, default=3)
        e.add_argument("--out", help="CSV destination (stdout if omitted)")
        e.set_defaults(func=func)

    v = sub.add_parser("validate", help="check solutions against instances")
    v.add_argument("--instances", required=True)
    v.add_argument("--solutions", required=True, help='JSON list of {"start": depot, "sequence": [...]}')
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="exact optima for instances with at most 10 customers")
    _add_source(o, count=10)
    o.add_argument("--out", help="CSV destination (stdout if omitted)")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InvalidSolution as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericFailure, TrainingAborted) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

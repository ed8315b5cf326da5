"""Command-line entry point: ``mdlab <subcommand> [flags]``.

Every run prints its resolved configuration (defaults and seeds included) as
one JSON line on stderr.  Exit codes: 0 success, 2 usage error, 3 data or
format error, 4 numeric failure.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baseline import LsqConfig, decompose
from .dataset import load_dataset, threads_from_env, write_dataset
from .errors import DataError, NumericError, PhysicsAssertion, ShapeMismatch
from .fiber_modes import FiberSpec, ModeCoefficients, ModeIndex, solve_lp11
from .grid import RenderGrid
from .imaging import export_image, render_full
from .metrics import (evaluate, quartile_examples, read_report_csv,
                      report_from_predictions, write_table)
from .nn.model import CnnConfig, build_model, load_model, save_model
from .nn.train import TrainConfig, check_compatible, train
from .polarimetry import CANONICAL, PRESETS, ChannelSet, PolarizerChannel

log = logging.getLogger("mdlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

#: the pixelwise tolerance of the LP-only ambiguity demonstration
AMBIGUITY_TOL = 1e-12


def _fiber(text: str) -> FiberSpec:
    try:
        a, na, lam = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected a,na,lambda (three numbers)")
    try:
        return FiberSpec(a, na, lam)
    except DataError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _emit_config(args, **resolved) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved)
    print(json.dumps(cfg, default=_jsonable, sort_keys=True), file=sys.stderr, flush=True)


def _jsonable(obj):
    if isinstance(obj, FiberSpec):
        return obj.to_dict()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return str(obj)


def _safe_name(channel: PolarizerChannel) -> str:
    return channel.value.lower()


# -- subcommands -------------------------------------------------------------------

def cmd_modes(args) -> int:
    _emit_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = RenderGrid(core_radius=args.fiber.core_radius)
    basis = solve_lp11(args.fiber, grid)
    for mode in ModeIndex:
        c = np.zeros(4, dtype=np.complex128)
        c[mode - 1] = 1.0
        stack = render_full(basis, c, CANONICAL, grid)
        for k, ch in enumerate(CANONICAL):
            export_image(stack[..., k], out / f"{mode.name}_{_safe_name(ch)}.pgm")
    info = {"u": basis.u, "w": basis.w, "v": basis.v, "fiber": args.fiber.to_dict(),
            "grid": grid.to_dict(), "channels": [c.value for c in CANONICAL]}
    (out / "modes.json").write_text(json.dumps(info, indent=2) + "\n")
    print(json.dumps({"u": basis.u, "w": basis.w, "v": basis.v}))
    return EXIT_OK


def cmd_gen(args) -> int:
    threads = threads_from_env()
    _emit_config(args, threads=threads)
    header = write_dataset(args.out, args.n, args.seed, ChannelSet.preset(args.channels),
                           args.fiber, threads=threads)
    log.info("wrote %d samples %s to %s", header.n, header.image_shape, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    history_path = args.history or f"{args.out}.history.csv"
    init_seed = args.seed if args.init_seed is None else args.init_seed
    _emit_config(args, history=history_path, init_seed=init_seed)
    data = load_dataset(args.data, mmap=True)
    val = load_dataset(args.val, mmap=True) if args.val else None
    if val is not None and val.channels != data.channels:
        raise ShapeMismatch(f"training channels {data.channels.names} differ from "
                            f"validation channels {val.channels.names}")
    config = CnnConfig.for_channels(len(data.channels))
    model = build_model(config, init_seed=init_seed)
    check_compatible(model, data, val)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed)
    model, history = train(model, data, tcfg, val_set=val)
    save_model(model, args.out, extra={"channels": data.channels.names,
                                       "train_seed": args.seed, "init_seed": init_seed,
                                       "best_epoch": history.best_epoch})
    history.to_csv(history_path)
    return EXIT_OK


def _print_quartiles(per_sample, sample_ids) -> None:
    picks = quartile_examples(per_sample["label_mae"])
    for tag, i in zip(("q1", "median", "q3"), picks):
        print(f"{tag} sample_id={int(sample_ids[i])} label_mae={per_sample['label_mae'][i]:.6g}")


def cmd_eval(args) -> int:
    _emit_config(args)
    model = load_model(args.model)
    data = load_dataset(args.data, mmap=True)
    check_compatible(model, data)
    report = evaluate(model, data)
    report.write_csv(args.out)
    if args.per_sample:
        report.write_per_sample_csv(args.per_sample, data.sample_ids)
    if report.n_samples >= 4:
        _print_quartiles(report.per_sample, data.sample_ids)
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = LsqConfig(starts=args.starts, seed=args.seed)
    _emit_config(args, lsq=dataclasses.asdict(cfg))
    data = load_dataset(args.data)
    channels = ChannelSet.preset(args.channels) if args.channels else data.channels
    if channels != data.channels:
        raise ShapeMismatch(f"requested channels {channels.names} but the dataset holds "
                            f"{data.channels.names}")
    limit = len(data) if args.limit is None else min(args.limit, len(data))
    preds = np.empty((limit, 7))
    ambiguity = 0
    for i in range(limit):
        res = decompose(data.images[i], channels, cfg, data.header.fiber)
        preds[i] = res.label
        ambiguity += res.ambiguity_count > 0
        log.info("sample %d residual=%.3g alternates=%d", i, res.residual, len(res.alternates))
    report = report_from_predictions(data.labels[:limit], preds, data.header.fiber)
    report.write_csv(args.out, extra={"ambiguity_count": int(ambiguity)})
    if args.per_sample:
        report.write_per_sample_csv(args.per_sample, data.sample_ids[:limit])
    return EXIT_OK


def _mixed(sign: int) -> ModeCoefficients:
    return ModeCoefficients([1.0, sign * 1j, 0.0, 0.0])


def ambiguity_checks(spec: FiberSpec = FiberSpec()) -> tuple:
    """Render TE01 + iTM01 and TE01 - iTM01 in all seven channels and compare."""
    grid = RenderGrid(core_radius=spec.core_radius)
    basis = solve_lp11(spec, grid)
    plus = render_full(basis, _mixed(+1), CANONICAL, grid)
    minus = render_full(basis, _mixed(-1), CANONICAL, grid)
    idx = {ch: k for k, ch in enumerate(CANONICAL)}
    lp = [idx[PolarizerChannel(n)] for n in ("LP0", "LP45", "LP90", "LP135")]
    r, l = idx[PolarizerChannel.RHCP], idx[PolarizerChannel.LHCP]
    checks = {
        "lp_max_abs_diff": float(np.max(np.abs(plus[..., lp] - minus[..., lp]))),
        "full_max_abs_diff": float(np.max(np.abs(plus[..., 0] - minus[..., 0]))),
        "rhcp_plus_vs_lhcp_minus": float(np.max(np.abs(plus[..., r] - minus[..., l]))),
        "lhcp_plus_vs_rhcp_minus": float(np.max(np.abs(plus[..., l] - minus[..., r]))),
        "cp_max_abs_diff": float(np.max(np.abs(plus[..., r] - minus[..., r]))),
        "tolerance": AMBIGUITY_TOL,
    }
    checks["lp_identical"] = checks["lp_max_abs_diff"] < AMBIGUITY_TOL
    checks["cp_swapped"] = max(checks["rhcp_plus_vs_lhcp_minus"],
                               checks["lhcp_plus_vs_rhcp_minus"]) < AMBIGUITY_TOL
    checks["cp_distinguishes"] = checks["cp_max_abs_diff"] > 1e-3 * float(np.max(plus))
    return checks, plus, minus


def cmd_demo_ambiguity(args) -> int:
    _emit_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checks, plus, minus = ambiguity_checks(args.fiber)
    for tag, stack in (("plus", plus), ("minus", minus)):
        for k, ch in enumerate(CANONICAL):
            export_image(stack[..., k], out / f"TE01_{tag}_iTM01_{_safe_name(ch)}.pgm",
                         allow_blank=True)
    checks["handedness"] = "RHCP=|(ex-i*ey)/sqrt2|^2"
    checks["coefficients"] = {"plus": [1, "+i", 0, 0], "minus": [1, "-i", 0, 0]}
    (out / "ambiguity.json").write_text(json.dumps(checks, indent=2) + "\n")
    print(json.dumps({k: checks[k] for k in ("lp_max_abs_diff", "rhcp_plus_vs_lhcp_minus",
                                             "lp_identical", "cp_swapped")}))
    if not (checks["lp_identical"] and checks["cp_swapped"]):
        raise PhysicsAssertion("LP-only ambiguity contract violated: "
                               f"{json.dumps(checks)}")
    return EXIT_OK


def cmd_report(args) -> int:
    _emit_config(args)
    rows = {}
    for item in args.inputs:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        rows[name] = read_report_csv(path)
    compare = None
    if args.compare:
        worse, sep, better = args.compare.partition(",")
        if not sep or worse not in rows or better not in rows:
            raise DataError(f"--compare must name two loaded reports as WORSE,BETTER "
                            f"(have {sorted(rows)})")
        compare = (worse, better)
    write_table(args.out, rows, compare)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdlab", description="LP11 modal decomposition toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    default_fiber = "12.5,0.1,1.064"

    s = sub.add_parser("modes", help="render the four LP11 vector modes in all channels")
    s.add_argument("--out", required=True)
    s.add_argument("--fiber", type=_fiber, default=_fiber(default_fiber),
                   help="core radius (um), NA, wavelength (um)")
    s.set_defaults(func=cmd_modes)

    s = sub.add_parser("gen", help="generate a dataset file")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--channels", choices=sorted(PRESETS), default="n4")
    s.add_argument("--fiber", type=_fiber, default=_fiber(default_fiber))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("train", help="train the CNN")
    s.add_argument("--data", required=True)
    s.add_argument("--val")
    s.add_argument("--epochs", type=_positive_int, default=300)
    s.add_argument("--batch", type=_positive_int, default=128)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init-seed", type=int, default=None,
                   help="weight initialization seed (defaults to --seed)")
    s.add_argument("--history", help="history CSV path (default: MODEL.history.csv)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--per-sample")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="least-squares decomposition of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--channels", choices=sorted(PRESETS),
                   help="must match the dataset (default: the dataset's own channels)")
    s.add_argument("--out", required=True)
    s.add_argument("--per-sample")
    s.add_argument("--starts", type=_positive_int, default=LsqConfig.starts)
    s.add_argument("--seed", type=int, default=LsqConfig.seed)
    s.add_argument("--limit", type=_positive_int, help="only the first LIMIT samples")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("demo-ambiguity", help="show that LP images cannot tell C from conj(C)")
    s.add_argument("--out", required=True)
    s.add_argument("--fiber", type=_fiber, default=_fiber(default_fiber))
    s.set_defaults(func=cmd_demo_ambiguity)

    s = sub.add_parser("report", help="combine report CSVs into one table")
    s.add_argument("inputs", nargs="+", metavar="NAME=REPORT.csv")
    s.add_argument("--compare", metavar="WORSE,BETTER",
                   help="append the relative improvement of BETTER over WORSE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"mdlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"mdlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"mdlab: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

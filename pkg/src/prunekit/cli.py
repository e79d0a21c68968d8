"""prunekit command line.

Exit codes: 0 ok, 2 bad input (config, arguments, checkpoint), 3 NaN abort,
4 invariant violation. Errors are printed as one line,
``error: <code>: <detail>``, on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .arch import KNOWN_ARCHS, ArchError, build_arch, count_flops, uniform_rates
from .compactor import NotCompactibleError, compact
from .config import DEFAULTS_HELP, ConfigError, RunConfig, parse_config
from .data import make_dataset
from .pruning import RAMPS, InvariantViolation, Mode, ScheduleConfig, schedule_csv
from .trainer import NaNLossError, evaluate, run_ghfp, run_sweep


class CliError(Exception):
    def __init__(self, code: str, detail: str, status: int = 2):
        super().__init__(detail)
        self.code, self.detail, self.status = code, detail, status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _rate(text: str) -> float:
    r = float(text)
    if not 0 <= r < 1:
        raise argparse.ArgumentTypeError(f"rate must be in [0, 1), got {r}")
    return r


def _read_rates(path: str) -> dict[str, float]:
    rates = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.replace(",", "=", 1).partition("=")
        try:
            if not sep:
                raise ValueError(line)
            rates[key.strip()] = _rate(value.strip())
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise CliError("config", f"{path}:{lineno}: bad rate line: {e}") from None
    return rates


def cmd_flops(args) -> None:
    arch = build_arch(args.arch)
    rates = _read_rates(args.rates) if args.rates else uniform_rates(arch, args.rate)
    report = count_flops(arch, rates, channels=args.channels)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    else:
        sys.stdout.write(report.to_csv())
    print(report.summary())


def cmd_schedule(args) -> None:
    cfg = ScheduleConfig(mode=Mode.parse(args.mode), alpha0=args.alpha0, epsilon=args.epsilon,
                         lambda_i=args.lambda_i, lambda_f=args.lambda_f, t_max=args.t_max,
                         goal_rate=args.goal_rate, rate_ramp=args.ramp)
    sys.stdout.write(schedule_csv(cfg, ["layer0"]))


def _load_config(path: str, mode: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError("config", f"cannot read {path}: {e.strerror}") from None
    if mode:
        # a later line wins, and the mode's defaults then apply to unset keys
        text += f"\nmode = {Mode.parse(mode).value}\n"
    return parse_config(text, source=path)


def cmd_run(args) -> None:
    cfg = _load_config(args.config, args.mode)
    overrides = {k: v for k, v in (("seed", args.seed), ("metrics_path", args.metrics),
                                   ("checkpoint_path", args.checkpoint)) if v is not None}
    cfg = cfg.replace(**overrides)
    if args.sweep:
        if not cfg.metrics_path:
            cfg = cfg.replace(metrics_path="metrics.csv")
        seeds = range(cfg.seed, cfg.seed + args.sweep)
        run_sweep(cfg, seeds)
        print(f"ok: {args.sweep} runs")
        return
    result = run_ghfp(cfg)
    if not cfg.metrics_path:
        sys.stdout.write(result.metrics_csv())
    last = result.metrics[-1]
    print(f"final test_acc={last.test_acc!r}", file=sys.stderr)


def cmd_compact(args) -> None:
    ck = ckpt_io.load(args.checkpoint)
    out = compact(ck.network, ck.mask)
    dest = args.output or str(Path(args.checkpoint).with_suffix(".compact.pkpt"))
    ckpt_io.save(dest, ckpt_io.Checkpoint(out.network, out.mask, ck.state, ck.config_text))
    if args.report:
        Path(args.report).write_text(out.report)
    sys.stdout.write(out.report)


def cmd_eval(args) -> None:
    ck = ckpt_io.load(args.checkpoint)
    if not ck.config_text:
        raise CliError("checkpoint", f"{args.checkpoint} carries no run config to rebuild its test set")
    cfg = parse_config(ck.config_text, source=f"{args.checkpoint}:CONF")
    _, test = make_dataset(cfg.seed, cfg.classes, cfg.n_train, cfg.n_test, cfg.noise, cfg.contrast)
    print(f"test_acc={evaluate(ck.network, test)!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prunekit", description="Soft-to-hard filter pruning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("flops", help="MAC count of an architecture under pruning")
    f.add_argument("arch", help=f"one of {', '.join(KNOWN_ARCHS)}")
    g = f.add_mutually_exclusive_group()
    g.add_argument("--rate", type=_rate, default=0.0, help="uniform rate on prunable layers")
    g.add_argument("--rates", help="file of 'layer = rate' lines")
    f.add_argument("--channels", choices=("fractional", "integer"), default="fractional",
                   help="count n*(1-P) (fractional) or n-floor(n*P) (integer) live filters")
    f.add_argument("--csv", help="write per-layer CSV here instead of stdout")
    f.set_defaults(func=cmd_flops)

    s = sub.add_parser("schedule", help="dump alpha / lambda_h / rate schedules as CSV")
    s.add_argument("--t-max", type=int, default=200)
    s.add_argument("--alpha0", type=float, default=1.0)
    s.add_argument("--epsilon", type=float, default=1e-4)
    s.add_argument("--lambda-i", type=float, default=0.0)
    s.add_argument("--lambda-f", type=float, default=1.0)
    s.add_argument("--goal-rate", type=float, default=0.4)
    s.add_argument("--ramp", choices=RAMPS, default="cubic")
    s.add_argument("--mode", default="GHFP")
    s.set_defaults(func=cmd_schedule)

    r = sub.add_parser("run", help="train with pruning", epilog="config keys and defaults:\n" + DEFAULTS_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("config")
    r.add_argument("--mode")
    r.add_argument("--seed", type=int)
    r.add_argument("--sweep", type=int, metavar="N", help="run N consecutive seeds")
    r.add_argument("--metrics", help="metrics CSV path (per-seed suffix under --sweep)")
    r.add_argument("--checkpoint", help="checkpoint path (per-seed suffix under --sweep)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compact", help="drop zeroed filters from a checkpoint")
    c.add_argument("checkpoint")
    c.add_argument("-o", "--output")
    c.add_argument("--report")
    c.set_defaults(func=cmd_compact)

    e = sub.add_parser("eval", help="test accuracy of a checkpoint")
    e.add_argument("checkpoint")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except CliError as e:
        err = e
    except NaNLossError as e:
        err = CliError("nan", str(e), 3)
    except NotCompactibleError as e:
        err = CliError("not_compactible", str(e), 4)
    except InvariantViolation as e:
        err = CliError("invariant", str(e), 4)
    except ckpt_io.CheckpointError as e:
        err = CliError("checkpoint", str(e))
    except (ConfigError, ArchError) as e:
        err = CliError("config", str(e))
    except (ValueError, OSError) as e:
        err = CliError("input", str(e))
    print(f"error: {err.code}: {' '.join(err.detail.split())}", file=sys.stderr)
    return err.status


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``enkg run | make-truth | metrics | render``.

Exit codes: 0 ok, 2 configuration error, 3 numerical abort, 4 I/O error.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import load_config, load_preset, preset_names
from .exceptions import ConfigError, FormatError, InvalidArgumentError, NumericalAbort, UnsupportedOperation
from .experiment import make_truth, run_experiment
from .metio import metric_report, read_grid, render_png, write_grid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _load(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.preset:
        cfg = load_preset(args.preset)
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise ConfigError("one of --config or --preset is required")
    return cfg.replace(seed=args.seed, out=args.out)


def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("ENKG_WORKERS")
    if env is None:
        return None
    try:
        value = int(env)
    except ValueError:
        raise ConfigError(f"ENKG_WORKERS must be a positive integer, got {env!r}") from None
    if value < 1:
        raise ConfigError(f"ENKG_WORKERS must be a positive integer, got {env!r}")
    return value


def cmd_run(args):
    cfg = _load(args)
    out = run_experiment(cfg, workers=_workers(args))
    print(json.dumps(out.summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_make_truth(args):
    cfg = _load(args)
    problem, y, _ = make_truth(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    write_grid(os.path.join(cfg.out, "truth.egrd"), problem.as_field(problem.truth), "truth", cfg.seed)
    write_grid(os.path.join(cfg.out, "observation.egrd"), y, "observation", cfg.seed)
    print(f"wrote truth.egrd and observation.egrd to {cfg.out}")
    return EXIT_OK


def cmd_metrics(args):
    est = read_grid(args.estimate).data
    truth = read_grid(args.truth).data
    report = metric_report(est, truth, peak=args.peak)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_render(args):
    data = read_grid(args.field).data
    if data.ndim == 1:
        side = int(round(np.sqrt(data.size)))
        if side * side != data.size:
            raise InvalidArgumentError("a 1-D grid can be rendered only when its length is a square")
        data = data.reshape(side, side)
    if data.ndim != 2:
        raise InvalidArgumentError(f"render needs a 2-D grid, got dims {list(data.shape)}")
    out = args.out or os.path.splitext(args.field)[0] + ".png"
    lo, hi = render_png(data, out, args.colormap, args.percentile)
    print(f"wrote {out} (window [{lo:.6g}, {hi:.6g}])")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="enkg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_like(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--preset", help=f"bundled configuration ({', '.join(preset_names())})")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--workers", type=int, help="forward-model worker threads (env ENKG_WORKERS)")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)

    run_like("run", cmd_run, "solve an inverse problem and write artifacts")
    run_like("make-truth", cmd_make_truth, "write the ground truth and observation only")

    p = sub.add_parser("metrics", help="relative L2 and PSNR between two grid files")
    p.add_argument("estimate")
    p.add_argument("truth")
    p.add_argument("--peak", type=float)
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", help="render a grid file as an 8-bit PNG")
    p.add_argument("field")
    p.add_argument("--out")
    p.add_argument("--colormap", choices=("grayscale", "diverging"), default="diverging")
    p.add_argument("--percentile", type=float, default=99.0)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigError("must be a positive integer", key="--workers")
        return args.func(args)
    except (ConfigError, InvalidArgumentError, UnsupportedOperation) as exc:
        print(f"enkg: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        where = f" (iteration {exc.iteration})" if exc.iteration is not None else ""
        print(f"enkg: numerical abort{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError) as exc:
        print(f"enkg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""``genad`` command line: one subcommand per pipeline phase plus inference, evaluation and sweeps.

The effective configuration of a run directory is kept in ``<run-dir>/config.txt``
and reused by later subcommands; ``--config`` and flag overrides replace it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import IncompatibleCheckpointError, ManifestError
from .config import (ConfigInvariantError, ConfigParseError, ExperimentConfig, load_config,
                     serialize)
from .marketplace import ConfigError

log = logging.getLogger("genad")

CONFIG_FILE = "config.txt"
USAGE_ERROR = 2


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _variant_dir(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=DIR, got {text!r}")
    return name, path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genad", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, help="key = value config file")
        s.add_argument("--run-dir", type=Path, default=Path("run"), help="run directory (default ./run)")
        s.add_argument("--seed", type=int, help="override the config seed")
        return s

    cmd("gen-data", "write the synthetic catalog and request files")
    s = cmd("train-tokenizer", "fit the POI and creative RQ-VAE tokenizers")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s = cmd("pretrain", "interest pre-training of the generator")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--ablation", choices=["none", "mtp", "end", "bid", "gsp"])
    s = cmd("train-rm", "fit the reward model on simulated logged lists")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s = cmd("train-alloc", "policy-gradient post-training of the allocation head")
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--beam-width", type=int)
    s.add_argument("--ablation", choices=["none", "mtp", "end", "bid", "gsp"])
    s = cmd("train-pay", "Lagrangian training of the payment network")
    s.add_argument("--rounds", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--rho", type=float)
    s.add_argument("--lambda-init", type=float)
    s.add_argument("--nv", type=int)
    s.add_argument("--grid", type=_float_list, help="misreport factors, e.g. 0.5,1,1.5")
    s.add_argument("--regret-mode", choices=["fixed-alloc", "realloc"])
    s = cmd("run-auction", "allocate one test request and print the list, payments and scores")
    s.add_argument("--request", type=int, default=0, help="index into the test requests")
    s = cmd("evaluate", "metrics CSV over one or more trained variants")
    s.add_argument("--variant", type=_variant_dir, action="append", default=[],
                   help="extra NAME=DIR run to include (repeatable)")
    s.add_argument("--gsp-only", action="store_true", help="add the GSP-only baseline row")
    s.add_argument("--n-test", type=int, help="evaluate on the first N test requests")
    s.add_argument("--out", type=Path, help="CSV path (default <run-dir>/metrics.csv)")
    s = cmd("sweep", "allocation curves over alpha or beta")
    s.add_argument("--param", choices=["alpha", "beta"], required=True)
    s.add_argument("--values", type=_float_list, required=True)
    s.add_argument("--n-test", type=int)
    s.add_argument("--out", type=Path, help="CSV path (default <run-dir>/sweep_<param>.csv)")
    return p


# flag name -> config field, per subcommand
OVERRIDES = {
    "train-tokenizer": {"epochs": "tok_epochs"},
    "pretrain": {"epochs": "pretrain_epochs"},
    "train-rm": {"epochs": "rm_epochs"},
    "train-alloc": {"steps": "pg_steps", "beam_width": "beam_width"},
    "train-pay": {"rounds": "pay_rounds", "lambda_init": "lambda_init", "nv": "n_v",
                  "grid": "gammas", "regret_mode": "regret_mode"},
}
COMMON = ("seed", "lr", "alpha", "beta", "ablation", "rho")


def resolve_config(args) -> ExperimentConfig:
    """``--config`` if given, else the run directory's saved config, else defaults; then flags."""
    saved = args.run_dir / CONFIG_FILE
    if args.config is not None:
        cfg = load_config(args.config)
    elif saved.exists():
        cfg = load_config(saved)
    else:
        cfg = load_config(None)
    mapping = {k: k for k in COMMON}
    mapping.update(OVERRIDES.get(args.command, {}))
    changes = {field: getattr(args, flag) for flag, field in mapping.items()
               if getattr(args, flag, None) is not None}
    return cfg.replace(**changes) if changes else cfg


def _save_config(cfg: ExperimentConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_FILE).write_text(serialize(cfg), encoding="utf-8")


def _subset(requests, n):
    return requests if n is None else requests[:n]


def execute(args) -> int:
    cfg = resolve_config(args)
    run = pipeline.Run(cfg, args.run_dir)
    c = args.command
    if c == "gen-data":
        _save_config(cfg, args.run_dir)
        info = pipeline.gen_data(cfg, args.run_dir / "data")
        print(json.dumps(info, sort_keys=True))
    elif c == "train-tokenizer":
        _save_config(cfg, args.run_dir)
        run.train_tokenizer()
    elif c == "pretrain":
        run.manifest.require("pretrain", run.hashes)
        _save_config(cfg, args.run_dir)
        run.pretrain()
    elif c == "train-rm":
        run.manifest.require("rm", run.hashes)
        _save_config(cfg, args.run_dir)
        run.train_rm()
    elif c == "train-alloc":
        run.manifest.require("alloc", run.hashes)
        _save_config(cfg, args.run_dir)
        run.train_alloc()
    elif c == "train-pay":
        run.manifest.require("pay", run.hashes)
        _save_config(cfg, args.run_dir)
        run.train_pay()
    elif c == "run-auction":
        run.manifest.require("pay", run.hashes)
        if not run.complete():
            raise ManifestError("run-auction needs a trained payment phase; run `genad train-pay`")
        lab = run.load_through("pay")
        if not 0 <= args.request < len(lab.test):
            raise ConfigError(f"--request must be in [0, {len(lab.test)})")
        print(json.dumps(pipeline.auction_summary(lab, lab.test[args.request]), indent=1))
    elif c == "evaluate":
        runs = {cfg.variant: run}
        for name, path in args.variant:
            other = Path(path)
            ocfg = load_config(other / CONFIG_FILE) if (other / CONFIG_FILE).exists() else cfg
            runs[name] = pipeline.Run(ocfg, other)
        if args.gsp_only:
            runs["GSP-only"] = run
        requests = _subset(run.lab.test, args.n_test)
        text = pipeline.evaluate_runs(runs, requests=requests)
        out = args.out or args.run_dir / "metrics.csv"
        out.write_text(text, encoding="utf-8")
        sys.stdout.write(text)
    elif c == "sweep":
        if not run.complete():
            raise ManifestError("sweep needs a completed run; run the training phases first")
        lab = run.load_through("pay")
        text = pipeline.sweep(lab, args.param, args.values, _subset(lab.test, args.n_test))
        out = args.out or args.run_dir / f"sweep_{args.param}.csv"
        out.write_text(text, encoding="utf-8")
        sys.stdout.write(text)
    log.info("%s finished (%s)", c, args.run_dir)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return execute(args)
    except (ConfigParseError, ConfigInvariantError, ConfigError) as e:
        print(f"genad: config error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except ManifestError as e:
        print(f"genad: {e}", file=sys.stderr)
        return 1
    except (IncompatibleCheckpointError, FileNotFoundError) as e:
        print(f"genad: checkpoint error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``spotfs {run,sweep,power-opt,complexity}``."""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .analysis import LinkParams, complexity_counts, optimal_pilot_power
from .channel import data_path, load_profile, quantize_profile
from .config import ConfigError, RunConfig, load_config
from .grid import DdGrid
from .harness import emit_csv, run_scenario

SWEEP_FIELDS = {"snr": "snr_db", "pilot-power": "sigma2_p", "frame-size": "frame_sizes", "damping": "damping"}


def parse_range(text: str):
    """``a:b:step`` (inclusive of ``b`` up to rounding) or a comma list."""
    if ":" in text:
        try:
            a, b, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"range must be a:b:step, got {text!r}") from None
        if step <= 0 or b < a:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return tuple(round(a + i * step, 12) for i in range(n))
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None


def _float_list(text: str):
    return parse_range(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spotfs", description="Superimposed-pilot OTFS link simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, help="output directory for the CSV")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on this)")
        sp.add_argument("--quiet", action="store_true", help="suppress per-cell progress lines")

    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("--config", type=Path, required=True)
    common(r)

    s = sub.add_parser("sweep", help="sweep one parameter of a base configuration")
    s.add_argument("--param", choices=sorted(SWEEP_FIELDS), required=True)
    s.add_argument("--range", dest="values", type=parse_range, required=True, help="a:b:step or v1,v2,...")
    s.add_argument("--config", type=Path, help="base configuration (defaults apply otherwise)")
    s.add_argument("--schemes", help="comma-separated scheme tags")
    s.add_argument("--snr", type=_float_list, help="SNR list in dB for non-SNR sweeps")
    s.add_argument("--trials", type=int, help="minimum trials per cell")
    common(s)

    po = sub.add_parser("power-opt", help="print the optimal pilot/data power table")
    po.add_argument("--snr-list", type=_float_list, default=(0.0, 5.0, 10.0, 15.0, 20.0))
    po.add_argument("--profile", type=Path, default=None, help="path profile (delay_us, doppler_hz, power_db)")
    po.add_argument("--M", type=int, default=16)
    po.add_argument("--N", type=int, default=16)
    po.add_argument("--convention", choices=("raw", "normalized", "both"), default="both")

    c = sub.add_parser("complexity", help="print operation counts per scheme")
    c.add_argument("--params", default="", help="comma list of key=value, e.g. Q=5,S=2,N_I=20,N_SPI=2,l_max=4,k_max=12")
    c.add_argument("--sizes", type=_float_list, default=(16.0, 32.0, 64.0), help="M = N values")
    return p


def _progress(rec):
    print(
        f"{rec.scheme:>11} M={rec.M:<3} snr={rec.snr_db:6.2f} dB sp={rec.sigma2_p:.4f} damp={rec.damping:.2f}"
        f"  ber={rec.ber:.3e} mse={rec.mse_sim:.3e} se={rec.se_bits_per_hz:.3f} trials={rec.trials}",
        flush=True,
    )


def _execute(cfg: RunConfig, args) -> int:
    records = run_scenario(cfg, threads=max(1, args.threads), progress=None if args.quiet else _progress)
    out_dir = args.out if args.out is not None else Path(".")
    path = emit_csv(records, out_dir / Path(cfg.output).name)
    print(f"wrote {len(records)} records to {path}")
    return 0


def cmd_run(args) -> int:
    if not args.config.is_file():
        raise ConfigError(f"config file not found: {args.config}")
    cfg = load_config(args.config, seed=args.seed)
    return _execute(cfg, args)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, seed=args.seed) if args.config else RunConfig(seed=args.seed if args.seed is not None else 1)
    field = SWEEP_FIELDS[args.param]
    values = args.values
    kw = {}
    if field == "frame_sizes":
        values = tuple(int(v) for v in values)
    if field == "sigma2_p":
        kw["split_mode"] = "fixed"
    kw[field] = values
    if args.schemes:
        kw["schemes"] = tuple(s.strip() for s in args.schemes.split(","))
    if args.snr and field != "snr_db":
        kw["snr_db"] = args.snr
    if args.trials:
        kw["trials"] = args.trials
        kw["max_trials"] = max(cfg.max_trials, args.trials)
    kw["output"] = f"sweep_{args.param}.csv"
    return _execute(cfg.replace(**kw), args)


def power_table(snrs, grid: DdGrid, profile_path=None, conventions=("raw", "normalized")):
    rows = []
    path = profile_path or data_path("five_path_profile.csv")
    for conv in conventions:
        taps = quantize_profile(load_profile(path, normalize_total_power=(conv == "normalized")), grid)
        for snr in snrs:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                opt = optimal_pilot_power(LinkParams.from_snr(grid, taps, snr))
            rows.append((conv, float(snr), taps.sigma2_h, opt, bool(caught)))
    return rows


def cmd_power_opt(args) -> int:
    grid = DdGrid(args.M, args.N)
    convs = ("raw", "normalized") if args.convention == "both" else (args.convention,)
    rows = power_table(args.snr_list, grid, args.profile, convs)
    print(f"{'convention':<11} {'SNR (dB)':>8} {'sigma2_h':>9} {'sigma2_p_opt':>13} {'sigma2_d_opt':>13} {'grid_opt':>9}  method")
    for conv, snr, sh, opt, warned in rows:
        flag = "  (grid mismatch)" if warned else ""
        print(f"{conv:<11} {snr:8.2f} {sh:9.4f} {opt.sigma2_p_opt:13.4f} {opt.sigma2_d_opt:13.4f} {opt.grid_opt:9.4f}  {opt.method}{flag}")
    return 0


def parse_params(text: str) -> dict:
    defaults = {"Q": 5, "S": 2, "N_I": 20, "N_SPI": 2, "l_max": 4, "k_max": 12}
    for item in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"bad complexity parameter {item!r}, expected key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in defaults:
            raise ConfigError(f"unknown complexity parameter {k!r}; known: {sorted(defaults)}")
        try:
            defaults[k] = int(v)
        except ValueError:
            raise ConfigError(f"complexity parameter {k} must be an integer") from None
    return defaults


def cmd_complexity(args) -> int:
    prm = parse_params(args.params)
    print("params: " + ", ".join(f"{k}={v}" for k, v in prm.items()))
    print(f"{'M=N':>5} {'EP':>14} {'SP-NI':>14} {'SP-I':>14}")
    for s in args.sizes:
        m = int(s)
        counts = [complexity_counts(sch, m, m, prm["Q"], prm["S"], prm["N_I"], prm["N_SPI"], prm["l_max"], prm["k_max"])
                  for sch in ("EP", "SP-NI", "SP-I")]
        print(f"{m:>5} " + " ".join(f"{c:>14d}" for c in counts))
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "power-opt": cmd_power_opt, "complexity": cmd_complexity}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"spotfs: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime faults
        print(f"spotfs: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

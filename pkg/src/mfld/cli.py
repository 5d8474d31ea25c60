"""Command-line entry point: ``mfld {run,scaling,poc,verify,bounds}``.

Exit codes: 0 when every asserted verdict passes (and, with ``--replay``,
every regenerated file is byte-identical), 1 when a verdict fails, 2 for
usage or configuration errors, 3 when a replay differs from the original.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import KINDS, THREADS_ENV, ExperimentConfig, emit_report, run_study

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_REPLAY = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mfld",
        description="Finite-particle mean-field Langevin studies.",
        epilog=f"Set {THREADS_ENV}=k to spread independent runs over k worker processes.")
    sub = p.add_subparsers(dest="kind", required=True)
    helps = {
        "run": "long runs with marginal-KL and second-moment tracking",
        "scaling": "per-particle Bregman gap against N (and lambda)",
        "poc": "propagation-of-chaos W2 study with shared-noise coupling",
        "verify": "identity and bound verification batteries",
        "bounds": "bound and envelope tables with surrogate constants",
    }
    for kind in KINDS:
        s = sub.add_parser(kind, help=helps[kind])
        s.add_argument("--config", type=Path, help="YAML/JSON file whose keys mirror ExperimentConfig")
        s.add_argument("--seed", type=int, help="base seed (replaces any explicit seed list)")
        s.add_argument("--out", type=Path, help="output directory (default: config 'output')")
        s.add_argument("--replay", action="store_true",
                       help="re-run <out>/config.json into <out>/replay and compare bytes")
    return p


def _load(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.from_file(args.config)
        if cfg.kind != args.kind and "kind" in _raw_keys(args.config):
            raise ValueError(f"config kind {cfg.kind!r} does not match subcommand {args.kind!r}")
        cfg = cfg.replace(kind=args.kind)
    else:
        cfg = ExperimentConfig(kind=args.kind, n_values=_default_sweep(args.kind))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed, seeds=None)
    if args.out is not None:
        cfg = cfg.replace(output=str(args.out))
    return cfg


def _raw_keys(path: Path) -> set:
    import yaml

    raw = yaml.safe_load(path.read_text()) or {}
    return set(raw)


def _default_sweep(kind: str) -> list:
    if kind == "scaling":
        return [16, 64, 256]
    if kind == "poc":
        return [16, 64, 256]
    return []


def _print_verdicts(report) -> None:
    for v in report.verdicts:
        tag = "PASS" if v.passed else "FAIL"
        extra = f" value={v.value!r}" if v.value is not None else ""
        extra += f" threshold={v.threshold!r}" if v.threshold is not None else ""
        print(f"{tag} {v.name}{extra}{' (' + v.detail + ')' if v.detail else ''}")
    for f in report.flags:
        print(f"FLAG {f}")
    print(f"{report.kind}: {'all verdicts pass' if report.passed else 'some verdicts FAIL'}")


def _replay(args) -> int:
    out = args.out
    if out is None:
        if args.config is None:
            raise ValueError("--replay needs --out (or a config naming the output directory)")
        out = Path(ExperimentConfig.from_file(args.config).output)
    src = out / "config.json"
    if not src.exists():
        raise FileNotFoundError(f"no recorded config at {src}")
    cfg = ExperimentConfig.from_file(src)
    if cfg.kind != args.kind:
        raise ValueError(f"{src} records kind {cfg.kind!r}, not {args.kind!r}")
    report = run_study(cfg)
    files = emit_report(report, out / "replay")
    mismatched = []
    for f in files:
        orig = out / f.name
        if not orig.exists() or orig.read_bytes() != f.read_bytes():
            mismatched.append(f.name)
    _print_verdicts(report)
    if mismatched:
        print(f"REPLAY MISMATCH in {len(mismatched)} file(s): {', '.join(sorted(mismatched))}")
        return EXIT_REPLAY
    print(f"REPLAY OK: {len(files)} file(s) byte-identical")
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.replay:
            return _replay(args)
        cfg = _load(args)
        report = run_study(cfg)
        files = emit_report(report, cfg.output)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _print_verdicts(report)
    print(f"wrote {len(files)} file(s) to {cfg.output}")
    return EXIT_OK if report.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

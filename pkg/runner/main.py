#!/usr/bin/env python3
"""twinwatch - Command-Line Entry Point"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from server.event_bus import EventBus
from store.errors import NotFoundError, StoreError
from store.timeseries import TimeSeriesStore
from studies import STUDIES

from .config import STORE_ENV_VAR, ConfigError, ScenarioConfig, create_config_file, load_config
from .report import (
    SCHEMA_FILE,
    load_study_report,
    report_runs,
    write_scenario_report,
    write_schema,
    write_study_report,
)
from .scenario import EXIT_ABORTED, EXIT_CONFIG, EXIT_OK, RUN_ERRORS, ContinuousValidation

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "configs/scenario.yaml"


def _load(args: argparse.Namespace) -> ScenarioConfig:
    overrides = {
        "seed": args.seed,
        "policy": args.policy,
        "replications": args.replications,
        "legacy": True if args.legacy else None,
    }
    config = load_config(args.config, overrides)
    if args.out:
        config = replace(config, output_dir=Path(args.out))
    return config


def cmd_calibrate(config: ScenarioConfig) -> int:
    """Run the calibration runs and store the thresholds."""
    store = TimeSeriesStore(config.resolved_store_dir)
    loop = ContinuousValidation(config, store)
    table = loop.calibrate()
    path = config.output_dir / "thresholds.json"
    table.save(path)
    print(f"Calibrated {len(table.entries)} thresholds on runs {list(table.calibration_run_ids)}")
    print(f"Thresholds: {path}")
    return EXIT_OK


def cmd_run(config: ScenarioConfig) -> int:
    """Run the continuous-validation scenario."""
    store = TimeSeriesStore(config.resolved_store_dir)
    bus = EventBus()
    updates = bus.subscribe("twin.params_updated")
    result = ContinuousValidation(config, store, bus).run()
    written = write_scenario_report(result.to_report(config), config.output_dir)

    print(f"Runs:     {len(result.results)}")
    for status, count in sorted(result.verdict_counts().items()):
        print(f"  {status:<22} {count}")
    for event in updates.drain():
        p = event.payload
        print(f"Twin update after run {p['run_id']}: {p['param']} {p['old']:.5f} -> {p['new']:.5f}")
    print(f"Store:    {store.root}")
    print(f"Report:   {written[0]}")
    return result.exit_code


def cmd_study(config: ScenarioConfig, name: str) -> int:
    """Run one study (or all of them) and write its report."""
    names = list(STUDIES) if name == "all" else [name]
    for study_name in names:
        study = STUDIES[study_name](config)
        logger.info(f"Study '{study_name}': {study.description}")
        report = study.run()
        written = write_study_report(report, config.output_dir / study_name)
        print(f"{study_name}: {len(report.rows)} rows -> {written[1]}")
    return EXIT_OK


def _study_source(target: str, args: argparse.Namespace) -> Path:
    """Resolve a study name, study directory or study JSON to the JSON file.

    A bare study name is looked up under the config's output directory, where `study`
    writes it.
    """
    if target in STUDIES:
        path = _load(args).output_dir / target / f"{target}.json"
    else:
        path = Path(target)
        if path.is_dir():
            path = path / f"{path.name}.json"
    if not path.is_file():
        raise NotFoundError("study report", target)
    return path


def cmd_report(args: argparse.Namespace) -> int:
    """Write reports for stored runs or saved studies, or the report schema."""
    if args.schema:
        path = write_schema(Path(args.schema))
        print(f"Schema: {path}")
        return EXIT_OK
    run_ids = [int(t) for t in args.targets if t.isdigit()]
    studies = [t for t in args.targets if not t.isdigit()]
    for target in studies:
        source = _study_source(target, args)
        report = load_study_report(source)
        out = Path(args.out) if args.out and target not in STUDIES else source.parent
        written = write_study_report(report, out)
        print(f"{report.study}: {len(report.rows)} rows -> {written[1]}")
    if studies and not run_ids:
        return EXIT_OK
    if args.store:
        root = Path(args.store)
    else:
        root = _load(args).resolved_store_dir
    store = TimeSeriesStore.open(root)
    out = Path(args.out) if args.out else root.parent / "reports"
    written = report_runs(store, run_ids, out)
    print(f"Report: {written[0]}")
    return EXIT_OK


def cmd_init(path: str) -> int:
    """Write a default scenario config."""
    target = Path(path)
    if target.exists():
        print(f"Refusing to overwrite {target}")
        return EXIT_CONFIG
    create_config_file(target)
    print(f"Config written to: {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", default=DEFAULT_CONFIG, help=f"Scenario config (default: {DEFAULT_CONFIG})")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--policy", choices=["any", "majority"], help="Verdict policy")
    common.add_argument("--replications", type=int, help="Twin replications per run")
    common.add_argument("--legacy", action="store_true", help="Rebuild experiment inputs from logged commands")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(
        description="twinwatch - continuous validation of a gantry-crane digital twin",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  twinwatch calibrate --config configs/scenario.yaml
  twinwatch run --config configs/closed_loop.yaml --seed 7
  twinwatch study sensitivity --config configs/studies.yaml --out out/studies
  twinwatch report 12 --store out/scenario/store
  twinwatch report sensitivity --config configs/studies.yaml

The store directory can be overridden with ${STORE_ENV_VAR}.
""",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="Run calibration runs and store thresholds")
    sub.add_parser("run", parents=[common], help="Run the continuous-validation scenario")
    study = sub.add_parser("study", parents=[common], help="Run a study")
    study.add_argument("name", choices=[*STUDIES, "all"])
    report = sub.add_parser("report", parents=[common], help="Report stored runs or a saved study")
    report.add_argument("targets", nargs="*", help="Run ids (default: every run), or a study name, directory or JSON")
    report.add_argument("--store", help="Store directory")
    report.add_argument("--schema", nargs="?", const=str(SCHEMA_FILE), help="Write the study report JSON schema")
    init = sub.add_parser("init", help="Write a default scenario config")
    init.add_argument("path", nargs="?", default="scenario.yaml")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    if getattr(args, "verbose", False):
        logging.getLogger().setLevel(logging.DEBUG)

    if args.command == "init":
        return cmd_init(args.path)

    try:
        if args.command == "report":
            return cmd_report(args)
        config = _load(args)
        if args.command == "calibrate":
            return cmd_calibrate(config)
        if args.command == "run":
            return cmd_run(config)
        return cmd_study(config, args.name)
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"Error: {e}")
        return EXIT_CONFIG
    except NotFoundError as e:
        print(f"Error: {e}")
        return EXIT_ABORTED
    except (StoreError, *RUN_ERRORS) as e:
        logger.error(f"Aborted: {type(e).__name__}: {e}")
        return EXIT_ABORTED


def main_cli():
    """CLI entry point."""
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted")
        sys.exit(EXIT_ABORTED)


if __name__ == "__main__":
    main_cli()

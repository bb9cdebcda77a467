"""Broadcast stability analyzer - command line interface"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import Dict, List, Optional

# src/__init__.py loads .env automatically
import src
from src.config import Config
from src.experiment import (
    RECIPE_BASE,
    RECIPE_GAMMAS,
    VERIFY_TOLERANCE,
    ExperimentRunner,
    ExperimentSpec,
    SweepResult,
    Task,
    fig_recipe,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VERIFY_BREACH = 2

# Values used when neither the environment, a config file nor a flag sets them
CLI_DEFAULTS: Dict[str, object] = dict(
    {key: value for key, value in RECIPE_BASE.items() if key != 'p2'},
    gamma1=RECIPE_GAMMAS['fig3'][0],
    gamma2=RECIPE_GAMMAS['fig3'][1],
)


def setup_logging():
    logging.basicConfig(
        level=getattr(logging, Config.get_log_level(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


def _add_system_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('system')
    group.add_argument('--gamma1', type=float)
    group.add_argument('--gamma2', type=float)
    group.add_argument('--p1', type=float, help='power of queue 1 (p2 = p-total - p1)')
    group.add_argument('--p-total', dest='p_total', type=float)
    group.add_argument('--d1', type=float)
    group.add_argument('--d2', type=float)
    group.add_argument('--alpha', type=float)
    group.add_argument('--scheme', choices=['tin', 'sd'])
    group.add_argument('--policy', choices=['fixed', 'adaptive'])
    group.add_argument('--variants', help="comma list like 'tin:fixed,sd:adaptive'")


def _add_run_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('run')
    group.add_argument('--sweep', choices=['p1', 'gamma1', 'gamma2'])
    group.add_argument('--sweep-from', dest='sweep_from', type=float)
    group.add_argument('--sweep-to', dest='sweep_to', type=float)
    group.add_argument('--steps', type=int)
    group.add_argument('--horizon', type=int)
    group.add_argument('--seed', type=int)
    group.add_argument('--drift-eps', dest='drift_eps', type=float)
    group.add_argument('--q-cap-fraction', dest='q_cap_fraction', type=float,
                       help='queue cap as a fraction of the horizon (default 0.05, verify 0.002)')
    group.add_argument('--lambda1', type=float)
    group.add_argument('--lambda2', type=float)
    group.add_argument('--mode', choices=['closed_form', 'channel_draw'])
    group.add_argument('--dominant', choices=['none', 'queue1_dummy', 'queue2_dummy'])
    group.add_argument('--points', type=int)
    group.add_argument('--splits', type=int)
    group.add_argument('--workers', type=int)
    group.add_argument('--format', choices=['csv', 'json'])
    group.add_argument('--out', help='output directory')
    group.add_argument('--config', help='flat key-value experiment file')
    group.add_argument('--ci', action='store_true', default=None,
                       help=f'exit with code {EXIT_VERIFY_BREACH} if a verify delta exceeds {VERIFY_TOLERANCE}')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='stability_cli',
        description='Stable throughput regions of a two-user broadcast channel',
    )
    parser.add_argument('--version', action='version', version=src.__version__)
    commands = parser.add_subparsers(dest='command', required=True)

    for task in Task:
        sub = commands.add_parser(task.value, help=f'run the {task.value} task')
        _add_system_flags(sub)
        _add_run_flags(sub)

    recipe = commands.add_parser('recipe', help='reproduce the data behind a figure')
    recipe.add_argument('name', choices=sorted(RECIPE_GAMMAS))
    recipe.add_argument('--verify', action='store_true', help='add the boundary verification task')
    _add_run_flags(recipe)
    return parser


def _flag_values(args: argparse.Namespace) -> Dict[str, object]:
    skip = {'command', 'config', 'name', 'verify'}
    return {key: value for key, value in vars(args).items() if value is not None and key not in skip}


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    """
    Merge defaults < environment < config file < flags into a spec.

    Raises:
        ValueError: From config loading or spec validation
    """
    settings: Dict[str, object] = dict(CLI_DEFAULTS)
    settings.update(Config.experiment_defaults())
    if args.config:
        settings.update(Config.load_experiment_file(args.config))
    settings.update(_flag_values(args))

    if args.command != 'recipe':
        settings['tasks'] = args.command
        return ExperimentSpec.from_mapping(settings)

    # recipes fix the system; run settings still come from the layers above
    spec = fig_recipe(args.name, with_verify=args.verify)
    run_settings = ExperimentSpec.from_mapping(dict(settings, tasks='probs'))
    return replace(
        spec,
        sim=run_settings.sim,
        output_dir=run_settings.output_dir,
        output_format=run_settings.output_format,
        points=run_settings.points,
        splits=run_settings.splits,
        workers=run_settings.workers,
        ci=run_settings.ci,
    ).validate()


def print_summary(spec: ExperimentSpec, result: SweepResult):
    """Print a short status report of a finished run."""
    print("\n" + "=" * 50)
    print(f"{spec.name.upper()}: {', '.join(t.value for t in spec.tasks)}")
    print("=" * 50)
    for task in spec.tasks:
        rows = result.for_task(task).rows
        print(f"✓ {task.value}: {len(rows)} row(s)")
        if task is Task.PROBS and len(rows) <= 8:
            for row in rows:
                p = row.payload
                print(f"   {row.scheme.value}/{row.policy.value}: "
                      f"P(D1/1)={p['p_1_1']:.4f} P(D2/2)={p['p_2_2']:.4f} "
                      f"P(D1/1,2)={p['p_1_12']:.4f} P(D2/1,2)={p['p_2_12']:.4f}")
        elif task is Task.SIMULATE:
            for row in rows:
                print(f"   {row.scheme.value}/{row.policy.value}: verdict={row.payload['verdict']} "
                      f"final=({row.payload['final_q1']}, {row.payload['final_q2']})")
    if result.max_verify_delta is not None:
        mark = '❌' if result.verification_breached() else '✓'
        print(f"{mark} verify: max |delta| = {result.max_verify_delta:.4f} (tolerance {VERIFY_TOLERANCE})")
    for path in result.files:
        print(f"📄 {path}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = Config()
        setup_logging()
        logger.debug("Loaded %r", config)
        spec = build_spec(args)
        result = ExperimentRunner(spec).run()
    except ValueError as error:
        print(f"❌ {error}", file=sys.stderr)
        return EXIT_INVALID

    print_summary(spec, result)
    if spec.ci and result.verification_breached():
        return EXIT_VERIFY_BREACH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

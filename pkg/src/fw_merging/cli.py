import argparse
import pathlib
import sys
from typing import Optional
from . import utils
from .checkpoint import CheckpointPool, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, FWConfig
from .engine import run_fw
from .errors import FWMergeError, NumericsError
from .harness import run_relevance, run_scaling
from .objectives import Architecture, build_objective
from .options import Granularity, Init, MergeFn, SimplexMode, Variant
from .trace import write_trace


EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERICS = 3


#
# Sub-commands
#
def cmd_merge(args: argparse.Namespace) -> int:
    """ Merges a pool of FWCK checkpoints with Frank-Wolfe. """
    cfg = FWConfig.from_file(args.config) if args.config is not None else FWConfig()
    overrides = {
        "variant": args.variant,
        "lmo_granularity": args.lmo,
        "k": args.k,
        "budget": args.budget,
        "epsilon": args.epsilon,
        "simplex_mode": args.simplex,
        "merge_fn": args.merge_fn,
        "init": args.init,
    }
    cfg = cfg.replace(**{key: value for key, value in overrides.items() if value is not None})
    pool = CheckpointPool.from_directory(args.pool)
    theta0 = load_checkpoint(args.base)
    objective = build_objective(args.objective, Architecture.from_schema(theta0.schema))
    utils.log_info(f"Merging {len(pool)} checkpoints with {cfg.variant} FW ({cfg.lmo_granularity}-wise)")
    result = run_fw(cfg, pool, objective, theta0)
    save_checkpoint(result.merged, args.out)
    if args.trace is not None:
        write_trace(result, args.trace)
    utils.log_info(f"{result.stop_reason} after {len(result.trace)} iterations, min gap {result.min_gap:.3e}")
    return EXIT_OK


def cmd_scaling(args: argparse.Namespace) -> int:
    """ Runs a pool-size sweep and writes report.csv. """
    config = ExperimentConfig.from_file(args.config)
    run_scaling(config)
    print(config.output_dir / "report.csv")
    return EXIT_OK


def cmd_relevance(args: argparse.Namespace) -> int:
    """ Scores each task's own checkpoint against the pool and writes relevance.csv. """
    config = ExperimentConfig.from_file(args.config)
    result = run_relevance(config)
    print(f"own-checkpoint-minimal fraction: {result.own_minimal_fraction:.4f}")
    return EXIT_OK


#
# Argument parsing
#
def _choices(enum) -> list[str]:
    return [member.value for member in enum]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fw-merge", description="Frank-Wolfe merging of fine-tuned checkpoints.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="Print progress messages on stderr.")
    commands = parser.add_subparsers(dest="command", required=True)

    merge = commands.add_parser("merge", help="Merge a pool of FWCK checkpoints.")
    merge.add_argument("--pool", required=True, type=pathlib.Path, help="Folder of .fwck checkpoints.")
    merge.add_argument("--base", required=True, type=pathlib.Path, help="The pre-trained checkpoint.")
    merge.add_argument("--objective", required=True, type=pathlib.Path, help="JSON/YAML task suite of the objective.")
    merge.add_argument("--out", required=True, type=pathlib.Path, help="The merged checkpoint to write.")
    merge.add_argument("--trace", type=pathlib.Path, help="The JSONL trace to write.")
    merge.add_argument("--config", type=pathlib.Path, help="JSON/YAML FW configuration; flags override it.")
    merge.add_argument("--variant", choices=_choices(Variant))
    merge.add_argument("--lmo", choices=_choices(Granularity) + list(Granularity.aliases()))
    merge.add_argument("--k", type=int)
    merge.add_argument("--budget", type=int)
    merge.add_argument("--epsilon", type=float)
    merge.add_argument("--simplex", choices=_choices(SimplexMode))
    merge.add_argument("--merge-fn", dest="merge_fn", choices=_choices(MergeFn))
    merge.add_argument("--init", choices=_choices(Init))
    merge.set_defaults(handler=cmd_merge)

    scaling = commands.add_parser("scaling", help="Run a pool-size sweep.")
    scaling.add_argument("config", type=pathlib.Path, help="The experiment configuration.")
    scaling.set_defaults(handler=cmd_scaling)

    relevance = commands.add_parser("relevance", help="Run the checkpoint relevance analysis.")
    relevance.add_argument("config", type=pathlib.Path, help="The experiment configuration.")
    relevance.set_defaults(handler=cmd_relevance)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """
    Entry point of the fw-merge command.

    Returns:
        0 on success, 2 on configuration/schema/format errors, 3 on numeric errors,
        1 on unexpected errors.
    """
    args = build_parser().parse_args(argv)
    utils.set_verbosity(args.verbose)
    try:
        return args.handler(args)
    except NumericsError as error:
        utils.log_error(None, f"fw-merge {args.command}: numeric error", error)
        return EXIT_NUMERICS
    except (FWMergeError, OSError) as error:
        utils.log_error(None, f"fw-merge {args.command}: {error}")
        return EXIT_CONFIG
    except Exception as error:
        utils.log_error(None, f"fw-merge {args.command}: unexpected error", error)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())

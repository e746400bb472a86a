#!/usr/bin/env python3
"""CLI entry point for linspec-vocoder."""

import argparse
import logging
import os
import random
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .config import GlobalConfig, describe_config_keys
from .errors import LinspecError, UsageError

logger = logging.getLogger(__name__)

EXIT_INTERRUPTED = 130


# ANSI color codes for terminal output
class Colors:
    BLUE = '\033[94m'
    CYAN = '\033[96m'
    GREEN = '\033[92m'
    YELLOW = '\033[93m'
    RED = '\033[91m'
    BOLD = '\033[1m'
    END = '\033[0m'

    @classmethod
    def disable(cls):
        """Disable colors (for non-TTY output)."""
        cls.BLUE = ''
        cls.CYAN = ''
        cls.GREEN = ''
        cls.YELLOW = ''
        cls.RED = ''
        cls.BOLD = ''
        cls.END = ''


def supports_color() -> bool:
    """Check if the terminal supports color output."""
    if not hasattr(sys.stdout, 'isatty'):
        return False
    return sys.stdout.isatty()


def print_success(message: str):
    print(f"{Colors.GREEN}✓ {message}{Colors.END}")


def print_warning(message: str):
    print(f"{Colors.YELLOW}⚠ {message}{Colors.END}")


def print_error(message: str):
    print(f"{Colors.RED}✗ {message}{Colors.END}", file=sys.stderr)


def print_info(message: str):
    print(f"{Colors.CYAN}ℹ {message}{Colors.END}")


def print_summary(title: str, rows: Dict[str, object]):
    print()
    print(f"{Colors.BOLD}{'═' * 55}{Colors.END}")
    print(f"{Colors.BOLD}  {title}{Colors.END}")
    print(f"{Colors.BOLD}{'═' * 55}{Colors.END}")
    width = max(len(k) for k in rows) + 2
    for key, value in rows.items():
        print(f"  {Colors.CYAN}{key + ':':<{width}}{Colors.END} {value}")
    print(f"{Colors.BOLD}{'═' * 55}{Colors.END}")


class ColoredHelpFormatter(argparse.RawDescriptionHelpFormatter):
    """Custom formatter that adds color to help output."""

    def __init__(self, prog, indent_increment=2, max_help_position=30, width=None):
        super().__init__(prog, indent_increment, max_help_position, width)

    def _format_action_invocation(self, action):
        if not action.option_strings:
            return super()._format_action_invocation(action)
        return f"{Colors.GREEN}{', '.join(action.option_strings)}{Colors.END}"

    def _format_usage(self, usage, actions, groups, prefix):
        if prefix is None:
            prefix = f'{Colors.BOLD}Usage: {Colors.END}'
        return super()._format_usage(usage, actions, groups, prefix)


class CommandParser(argparse.ArgumentParser):
    """Argument errors exit with the usage code (1) rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print_error(message)
        sys.exit(UsageError.exit_code)


def _group(parser: argparse.ArgumentParser, title: str):
    return parser.add_argument_group(f'{Colors.BOLD}{title}{Colors.END}')


def _common_options() -> argparse.ArgumentParser:
    common = CommandParser(add_help=False)
    config_group = _group(common, "Configuration")
    config_group.add_argument(
        "--config", "-c",
        type=Path,
        metavar="FILE",
        help="JSON config file (one object per section)",
    )
    config_group.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config key; repeatable. Flags win over the config file.",
    )
    config_group.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Global seed (default: config seed)",
    )
    config_group.add_argument(
        "--deterministic",
        action="store_true",
        help="Use deterministic kernels and seed torch, numpy and random",
    )
    config_group.add_argument(
        "--device",
        default=None,
        help="Torch device (default: cuda when available, else cpu)",
    )

    other_group = _group(common, "Other Options")
    other_group.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    other_group.add_argument("--quiet", "-q", action="store_true", help="Suppress non-essential output")
    other_group.add_argument("--no-color", action="store_true", help="Disable colored output")
    other_group.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    return common


def create_parser() -> argparse.ArgumentParser:
    formatter_class = ColoredHelpFormatter if supports_color() else argparse.RawDescriptionHelpFormatter
    common = _common_options()

    parser = CommandParser(
        prog="linspec-vocoder",
        description=f"{Colors.BOLD}Mel to full-bandwidth linear spectrogram estimation and vocoding{Colors.END}",
        formatter_class=formatter_class,
        epilog=f"""
{Colors.BOLD}Examples:{Colors.END}

  {Colors.CYAN}# Ingest a corpus and build the feature cache{Colors.END}
  %(prog)s extract corpus/ work/cache

  {Colors.CYAN}# Train the three stages{Colors.END}
  %(prog)s train lse --steps 2000
  %(prog)s train vocos2d --steps 2000
  %(prog)s train vocos-baseline --steps 2000

  {Colors.CYAN}# Synthesize with and without linear spectrogram estimation{Colors.END}
  %(prog)s synth input.wav -o out.wav --use-lse --seed 7
  %(prog)s synth input.wav -o baseline.wav

  {Colors.CYAN}# Realism evaluation and study images{Colors.END}
  %(prog)s eval --gt gt/ --method vocos=vocos/ --method lse_vocos2d=lse/ --out-dir eval/
  %(prog)s render wavs/ pngs/ --sheet sheet.pdf

{Colors.BOLD}Configuration keys:{Colors.END}
{describe_config_keys().replace("%", "%%")}
""",
    )
    parser.add_argument("--version", "-V", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CommandParser)
    commands.required = True

    extract = commands.add_parser("extract", parents=[common], formatter_class=formatter_class,
                                  help="Ingest audio, compute statistics and cache features")
    extract.add_argument("in_dir", type=Path, help="Directory of audio files")
    extract.add_argument("out_dir", type=Path, nargs="?", default=None,
                         help="Cache directory (default: paths.cache_dir)")
    extract.add_argument("--force", action="store_true", help="Re-ingest and rebuild every cache file")

    train = commands.add_parser("train", parents=[common], formatter_class=formatter_class,
                                help="Train one stage")
    train.add_argument("stage", choices=["lse", "vocos2d", "vocos-baseline"], help="Stage to train")
    train_group = _group(train, "Training")
    train_group.add_argument("--steps", type=int, default=None, help="Total updates (default: optim_*.steps)")
    train_group.add_argument("--resume", action="store_true", help="Continue from the latest checkpoint")
    train_group.add_argument("--input-kind", choices=["mel", "linear"], default=None,
                             help="Vocoder input features (default: vocos2d linear, vocos-baseline mel)")

    synth = commands.add_parser("synth", parents=[common], formatter_class=formatter_class,
                                help="Synthesize a waveform from a mel spectrogram")
    synth.add_argument("source", help="Input WAV file or cached clip id")
    synth_group = _group(synth, "Synthesis")
    synth_group.add_argument("--output", "-o", type=Path, required=True, metavar="FILE", help="Output WAV")
    synth_group.add_argument("--use-lse", action="store_true",
                             help="Estimate the linear spectrogram before vocoding")
    synth_group.add_argument("--vocoder", choices=["vocos2d", "vocos"], default=None,
                             help="Vocoder (default: vocos2d with --use-lse, vocos without)")
    synth_group.add_argument("--steps", type=int, default=None, help="Sampling steps (default: 32)")
    synth_group.add_argument("--dump-linear", type=Path, default=None, metavar="FILE",
                             help="Also write the estimated linear spectrogram as a cache record")

    evaluate = commands.add_parser("eval", parents=[common], formatter_class=formatter_class,
                                   help="Train and score the realism classifiers")
    eval_group = _group(evaluate, "Evaluation")
    eval_group.add_argument("--gt", type=Path, required=True, metavar="DIR", help="Ground-truth WAV directory")
    eval_group.add_argument("--method", action="append", default=[], metavar="NAME=DIR",
                            help="Synthetic method audio; repeatable")
    eval_group.add_argument("--regimes", default=None, metavar="LIST",
                            help="Comma-separated regimes (default: all four)")
    eval_group.add_argument("--out-dir", type=Path, default=Path("eval"), metavar="DIR",
                            help="Where scores.csv and scores.png go")
    eval_group.add_argument("--report", type=Path, default=None, metavar="FILE", help="Also write a PDF report")
    eval_group.add_argument("--score-endpoint", default=None, metavar="URL",
                            help="HTTP quality-score provider; writes quality.csv")

    render = commands.add_parser("render", parents=[common], formatter_class=formatter_class,
                                 help="Render spectrogram images")
    render.add_argument("wav_dir", type=Path)
    render.add_argument("png_dir", type=Path)
    render.add_argument("--sheet", type=Path, default=None, metavar="FILE",
                        help="Also compose the images into a shuffled PDF study sheet")
    return parser


def parse_methods(items: List[str]) -> Dict[str, Path]:
    methods = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--method must look like NAME=DIR: {item}")
        name, directory = item.split("=", 1)
        methods[name.strip()] = Path(directory)
    return methods


def load_config(args: argparse.Namespace) -> GlobalConfig:
    config = GlobalConfig.from_file(args.config) if args.config else GlobalConfig()
    config.apply_environment()
    config.apply_overrides(args.overrides)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "command", None) == "extract" and args.out_dir is not None:
        config.paths = replace(config.paths, cache_dir=str(args.out_dir))
    return config.validate()


def seed_everything(seed: int, deterministic: bool):
    import numpy as np
    import torch

    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True)


def default_device() -> str:
    import torch

    return "cuda" if torch.cuda.is_available() else "cpu"


def run_command(args: argparse.Namespace, config: GlobalConfig, use_progress: bool):
    from .pipeline import Pipeline, PipelineWithProgress, remote_provider

    pipeline_cls = PipelineWithProgress if use_progress else Pipeline
    pipeline = pipeline_cls(config, device=args.device or default_device())

    if args.command == "extract":
        manifest = pipeline.extract(args.in_dir, force=args.force)
        held_out = sum(e.split == "test" for e in manifest)
        if not args.quiet:
            print_summary("Extract", {"Clips": len(manifest), "Held out": held_out, "Cache": pipeline.cache_dir})

    elif args.command == "train":
        state = pipeline.train(args.stage, steps=args.steps, resume=args.resume, input_kind=args.input_kind)
        if not args.quiet:
            last = state.history[-1]["loss"] if state.history else float("nan")
            print_summary("Train", {"Stage": args.stage, "Step": state.step, "Last loss": f"{last:.5f}",
                                    "Run directory": pipeline.run_dir(args.stage, config)})

    elif args.command == "synth":
        clip = pipeline.synthesize(args.source, args.output, use_lse=args.use_lse, vocoder=args.vocoder,
                                   seed=args.seed, n_sample_steps=args.steps, dump_linear=args.dump_linear)
        if not args.quiet:
            print_success(f"Output: {args.output} ({clip.duration:.2f} s)")

    elif args.command == "eval":
        methods = {"gt": args.gt, **parse_methods(args.method)}
        regimes = [r.strip() for r in args.regimes.split(",")] if args.regimes else None
        provider = remote_provider(args.score_endpoint)
        try:
            table = pipeline.evaluate(methods, args.out_dir, regimes=regimes, report=args.report, provider=provider)
        finally:
            if provider is not None:
                provider.close()
        if not args.quiet:
            print_summary("Evaluate", {"Methods": len(table.methods), "Classifiers": len(table.columns),
                                       "Rows": len(table.cells), "Scores": args.out_dir / "scores.csv"})

    elif args.command == "render":
        images = pipeline.render(args.wav_dir, args.png_dir, sheet=args.sheet)
        if not args.quiet:
            print_success(f"Rendered {len(images)} images into {args.png_dir}")


def main(argv: Optional[List[str]] = None):
    argv = sys.argv[1:] if argv is None else argv
    # Pre-parse to check for --no-color before creating parser
    if '--no-color' in argv or not supports_color():
        Colors.disable()

    parser = create_parser()
    args = parser.parse_args(argv)

    if args.quiet:
        log_level = logging.WARNING
    elif args.verbose:
        log_level = logging.DEBUG
    else:
        log_level = logging.INFO

    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    use_progress = not args.quiet and not args.no_progress and supports_color()

    try:
        config = load_config(args)
        seed_everything(config.seed, args.deterministic)
        run_command(args, config, use_progress)
    except LinspecError as e:
        print_error(str(e))
        sys.exit(e.exit_code)
    except ValueError as e:
        print_error(f"Invalid input: {e}")
        sys.exit(1)
    except KeyboardInterrupt:
        print()
        print_warning("Interrupted by user")
        sys.exit(EXIT_INTERRUPTED)
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print_error(f"Unexpected error: {e}")
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()

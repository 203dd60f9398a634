"""Command registration and the pieces every command shares.

Commands register on a module-level ``router`` with a decorator, the way
each handler module groups its commands; ``fcf.main`` mounts every router
on one argparse tree.
"""
import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from fcf.config import RunConfig, load_run_config, parse_override
from fcf.exceptions import ConfigError, InvalidInputError
from fcf.services.channels import ChannelOptions
from fcf.services.data import Corpus, extract_patches
from fcf.services.filterbank import (
    FilterBank,
    FilterFamily,
    learn_pca,
    make_checkerboards,
    make_random,
    make_squares,
    make_uniform,
)
from fcf.services.synthetic import SynthSpec, make_synthetic
from fcf.storage.banks import load_bank
from fcf.storage.manifests import load_corpus

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], int]


def arg(*flags: str, **kwargs) -> Tuple[Tuple[str, ...], Dict]:
    return flags, kwargs


@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: Sequence[Tuple[Tuple[str, ...], Dict]] = ()
    uses_config: bool = True


@dataclass
class Router:
    """Commands of one handler module, optionally under a group name (``fcf filters ...``)."""

    group: Optional[str] = None
    help: str = ""
    commands: List[Command] = field(default_factory=list)

    def command(self, name: str, help: str = "", arguments=(), uses_config: bool = True):
        def decorator(func: Handler) -> Handler:
            self.commands.append(Command(name, help or (func.__doc__ or "").strip(), func, arguments, uses_config))
            return func

        return decorator

    def mount(self, subparsers) -> None:
        target = subparsers
        if self.group:
            group_parser = subparsers.add_parser(self.group, help=self.help)
            target = group_parser.add_subparsers(dest="subcommand", metavar="<subcommand>")
            target.required = True
        for cmd in self.commands:
            parser = target.add_parser(cmd.name, help=cmd.help, description=cmd.help)
            if cmd.uses_config:
                add_config_arguments(parser)
            for flags, kwargs in cmd.arguments:
                parser.add_argument(*flags, **kwargs)
            parser.set_defaults(handler=cmd.handler)


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="KEY=VALUE configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="shorthand for --set SEED=<n>")


def resolve_config(args: argparse.Namespace, flags: Optional[Dict[str, object]] = None) -> RunConfig:
    """Defaults, then --config, then --set, then command flags that map onto keys."""
    overrides: Dict[str, str] = {}
    for text in getattr(args, "overrides", []) or []:
        key, value = parse_override(text)
        overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["SEED"] = str(args.seed)
    for key, value in (flags or {}).items():
        if value is not None:
            overrides[key] = ",".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
    config = load_run_config(getattr(args, "config", None), overrides)
    logger.debug("Resolved configuration:\n" + "\n".join(config.to_lines()))
    return config


def header_lines(config: RunConfig, command: str) -> List[str]:
    """Artifact header: the command, then every resolved KEY=VALUE."""
    return [f"fcf {command}"] + config.to_lines()


def channel_options(config: RunConfig) -> ChannelOptions:
    return ChannelOptions(pre_smooth=config.channels.pre_smooth)


def generate_bank(config: RunConfig) -> FilterBank:
    """A bank of one of the generated families, sized by the FILTERBANK_* keys."""
    fb = config.filterbank
    try:
        family = FilterFamily(fb.family)
    except ValueError:
        raise ConfigError("FILTERBANK_FAMILY", f"unknown family {fb.family!r}")
    if family == FilterFamily.UNIFORM:
        return make_uniform(fb.cell_px)
    if family == FilterFamily.SQUARES:
        return make_squares(fb.n_sizes, fb.cell_px)
    if family == FilterFamily.CHECKERBOARDS:
        return make_checkerboards(fb.max_rows, fb.max_cols, fb.cell_px)
    if family == FilterFamily.RANDOM:
        return make_random(fb.n_random, fb.max_rows, fb.max_cols, seed=config.seed, cell_px=fb.cell_px)
    raise ConfigError("FILTERBANK_FAMILY", f"{family.value} banks are learned or loaded, not generated")


def learn_bank(config: RunConfig, corpus: Corpus) -> FilterBank:
    """PCA bank learned from patches of `corpus`."""
    fb = config.filterbank
    opts = channel_options(config)
    if fb.family == FilterFamily.PCA_ALL.value:
        split = "all"
        patches = {"all": extract_patches(corpus, fb.pca_patches, "all", config.seed, opts=opts)}
    elif fb.family == FilterFamily.PCA_FOREGROUND.value:
        split = "foreground"
        patches = {
            origin: extract_patches(corpus, fb.pca_patches, origin, config.seed, opts=opts)
            for origin in ("background", "foreground")
        }
    else:
        raise InvalidInputError(f"family {fb.family!r} is not learned from data")
    return learn_pca(patches, k=fb.pca_k, split=split)


def bank_for(config: RunConfig, corpus: Optional[Corpus] = None) -> FilterBank:
    """FILTERBANK_BANK_PATH when set, else a generated or (given a corpus) learned bank."""
    fb = config.filterbank
    if fb.bank_path:
        return load_bank(fb.bank_path)
    if fb.family in (FilterFamily.PCA_ALL.value, FilterFamily.PCA_FOREGROUND.value):
        if corpus is None:
            raise ConfigError("FILTERBANK_BANK_PATH", f"a {fb.family} bank needs a corpus or a saved bank")
        return learn_bank(config, corpus)
    if fb.family == FilterFamily.INFORMED.value:
        raise ConfigError("FILTERBANK_BANK_PATH", "informed banks are loaded from a file")
    return generate_bank(config)


def load_split(config: RunConfig, split: str) -> Corpus:
    """The DATA_*_MANIFEST corpus of a split, or a synthetic one rendered from SYNTH_*."""
    manifest = config.data.train_manifest if split == "train" else config.data.test_manifest
    if manifest:
        return load_corpus(manifest, config.data.subsample)
    n_images = config.synth.n_images if split == "train" else config.synth.test_images
    logger.info(f"No {split} manifest configured; rendering {n_images} synthetic images")
    return make_synthetic(SynthSpec.from_config(config.synth, n_images), seed=config.seed, split=split)


def parse_size(text: str) -> Tuple[int, int]:
    """``4x3`` -> (4, 3)."""
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}")
    return rows, cols

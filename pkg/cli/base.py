"""
Shared plumbing for the ReMP management commands: one `--section.key`
flag per config key plus short aliases, config precedence, and exit
codes (0 ok, 1 usage, 2 runtime).
"""
import logging
import sys

from django.core.management.base import BaseCommand, CommandError

from config.exceptions import EXIT_USAGE, DimensionError, command_exception_handler
from episodes.datasets import load_dataset
from networks.checkpoints import load_checkpoint
from .models import RunConfig
from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)

ALIASES = {
    "--classes": "data.classes",
    "--per-class": "data.per_class",
    "--dim": "data.dim",
    "--spread": "data.spread",
    "--separation": "data.separation",
    "--seed": "run.seed",
    "--alpha": "objective.alpha",
    "--arm": "train.arm",
    "--episodes": "eval.episodes",
    "--n-way": "episode.n_way",
    "--k-shot": "episode.k_shot",
    "--m-query": "episode.m_query",
    "--threads": "eval.threads",
    "--dataset": "paths.dataset",
    "--checkpoint": "paths.checkpoint",
    "--output-dir": "paths.output_dir",
}


def config_keys():
    """(section, key, field) for every config key, in declaration order."""
    for section, serializer in RunConfigSerializer().fields.items():
        for key, field in serializer.fields.items():
            yield section, key, field


def _describe(field):
    default = field.default
    if isinstance(default, list):
        default = ",".join(str(v) for v in default)
    parts = []
    if field.help_text:
        parts.append(str(field.help_text))
    choices = getattr(field, "choices", None)
    if choices:
        parts.append(f"one of {', '.join(choices)}")
    parts.append(f"default: {default}")
    return "; ".join(parts)


class ReMPCommand(BaseCommand):
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)

        def usage_error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                sys.stderr.write(f"{parser.prog}: error: {message}\n")
                sys.exit(EXIT_USAGE)
            raise CommandError(f"Error: {message}", returncode=EXIT_USAGE)

        parser.error = usage_error
        return parser

    def add_arguments(self, parser):
        parser.add_argument("--config", dest="config_file", default=None,
                            help="run-config file of 'section.key = value' lines; default: $REMP_CONFIG")
        group = parser.add_argument_group("aliases")
        for flag, target in ALIASES.items():
            group.add_argument(flag, dest=target, default=None, help=f"same as --{target}")
        current = None
        for section, key, field in config_keys():
            if section != current:
                group = parser.add_argument_group(f"{section} settings")
                current = section
            group.add_argument(f"--{section}.{key}", dest=f"{section}.{key}", default=None, help=_describe(field))

    def run_config(self, options):
        overrides = {}
        for name, value in options.items():
            section, dot, key = name.partition(".")
            if dot and value is not None:
                overrides.setdefault(section, {})[key] = value
        return RunConfig.build(overrides, options.get("config_file"))

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except Exception as exc:
            raise command_exception_handler(exc) from exc

    def handle(self, *args, **options):
        self.run(self.run_config(options))

    def run(self, config):
        raise NotImplementedError("subclasses of ReMPCommand must provide a run() method")


def load_dataset_and_checkpoint(config):
    """Dataset and trained params, checked against each other."""
    dataset = load_dataset(config.paths["dataset"])
    params = load_checkpoint(config.paths["checkpoint"])
    if params.embedder.input_dim != dataset.dim:
        raise DimensionError(
            f"checkpoint {config.paths['checkpoint']} expects {params.embedder.input_dim}-dim features, "
            f"dataset {config.paths['dataset']} has {dataset.dim}"
        )
    return dataset, params

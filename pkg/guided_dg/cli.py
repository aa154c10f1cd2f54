"""Console script for guided_dg."""
import argparse
from dataclasses import fields
from docstring_parser import parse as doc_parse


from .experiment import (
    Experiment,
    run
)

from .config import TrainConfig
from .synthdata import GenSpec

from .metadata import (
    __version__,
    __summary__,
    __program__
)

from .utils.core import (
    get_default_args,
    splitter,
    str2bool
)

from .debugging import (
    disable_logger,
    enable_logger,
    set_log_level
)


GENERAL_ARGS = ('command', 'logging', 'verbose', 'quiet')


def boolean(value):
    try:
        return str2bool(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def get_info(function):
    info = {}

    docstring = doc_parse(function.__doc__)
    args = get_default_args(function)

    for param in docstring.params:
        info[param.arg_name] = {
            'help': param.description,
            'default': args.get(param.arg_name)
        }
    return info


def add_param(info, group, *keys, **kwargs):
    key = keys[0].lstrip('-').replace('-', '_')
    group.add_argument(*keys, **info.get(key, {}), **kwargs)


def add_config_params(parser):
    """Flags for every training config and benchmark field. They default to
    None so that only explicitly given flags override the config file."""
    group = None
    for name, cls in (('Training Arguments', TrainConfig), ('Benchmark Arguments', GenSpec)):
        group = parser.add_argument_group(name)
        docs = {p.arg_name: p.description for p in doc_parse(cls.__doc__).params}
        for field in fields(cls):
            if cls is GenSpec and field.name == 'seed':
                continue
            kind = boolean if field.type is bool else field.type
            extra = {'nargs': '?', 'const': True} if field.type is bool else {}
            description = docs.get(field.name) or field.name.replace('_', ' ').capitalize()
            group.add_argument(
                f'--{field.name}', type=kind, default=None,
                help=f'{description} (default: {field.default})', **extra)

    group.add_argument(
        '--data_seed', type=int, default=None,
        help='Seed of the data generation, defaults to the training seed')


def main(cli_args=None):

    parser = argparse.ArgumentParser(
        description=__summary__,
        # formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.prog = __program__

    parser.add_argument('--version', action='version', version=__version__)

    debug_options = parser.add_mutually_exclusive_group()
    debug_options.add_argument('--logging', choices=['none', 'debug', 'info', 'warning', 'error', 'critical'],
                               help='Level of logging to display, defaults to info', default='info')
    debug_options.add_argument('--verbose', '-v', action='store_true',
                               help='Print various debugging information. This is equivalent to setting logging to debug. Defaults to False')
    debug_options.add_argument('--quiet', '-q', action='store_true',
                               help='Activate quiet mode (hide all output), defaults to False')

    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    def add_command(name, function):
        description = doc_parse(function.__doc__).short_description
        return subparsers.add_parser(name, help=description, description=description), get_info(function)

    # solve-space
    command, info = add_command('solve-space', Experiment.solve_space)
    add_param(info, command, '--dim', type=int)
    add_param(info, command, '--num-forgery', '--num_forgery', type=int)
    add_param(info, command, '--theta0', type=float)
    add_param(info, command, '--seed', type=int)
    add_param(info, command, '--tau', type=float)
    add_param(info, command, '--out', '-o')

    # gen-data
    command, info = add_command('gen-data', Experiment.gen_data)
    add_param(info, command, '--config', '-c')
    add_param(info, command, '--out', '-o')
    add_config_params(command)

    # train
    command, info = add_command('train', Experiment.train)
    add_param(info, command, '--config', '-c')
    add_param(info, command, '--out', '-o')
    add_param(info, command, '--space')
    add_param(info, command, '--data')
    add_config_params(command)

    # eval
    command, info = add_command('eval', Experiment.eval)
    add_param(info, command, '--scores')
    add_param(info, command, '--run')
    add_param(info, command, '--data')
    add_param(info, command, '--split', choices=['train', 'test', 'heldout'])
    add_param(info, command, '--out', '-o')

    # dump-features
    command, info = add_command('dump-features', Experiment.dump_features)
    add_param(info, command, '--run', required=True)
    add_param(info, command, '--data')
    add_param(info, command, '--split', choices=['train', 'test', 'heldout'])
    add_param(info, command, '--out', '-o')

    # ablate
    command, info = add_command('ablate', Experiment.ablate)
    add_param(info, command, '--config', '-c')
    add_param(info, command, '--out', '-o')
    add_param(info, command, '--seeds', type=int)
    add_param(info, command, '--jobs', '-j', type=int)
    add_param(info, command, '--variants', type=splitter)
    add_config_params(command)

    # sweep
    command, info = add_command('sweep', Experiment.sweep)
    add_param(info, command, '--param', required=True)
    add_param(info, command, '--values', type=splitter, required=True)
    add_param(info, command, '--config', '-c')
    add_param(info, command, '--out', '-o')
    add_param(info, command, '--seeds', type=int)
    add_param(info, command, '--jobs', '-j', type=int)
    add_config_params(command)

    args = parser.parse_args(args=cli_args)

    if args.verbose:
        args.logging = 'debug'

    if args.quiet or args.logging == 'none':
        disable_logger()
    else:
        enable_logger()
        set_log_level(args.logging)

    kwargs = {key: value for key, value in args.__dict__.items()
              if key not in GENERAL_ARGS}

    # Run with these arguments
    return run(args.command, quiet=args.quiet, **kwargs)

"""Main module."""
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace

import numpy as np

from .metadata import __version__

from .config import (
    TrainConfig,
    RunManifest,
    load_config,
    resolve
)
from .guidespace import (
    GuideSpace,
    analytic_theta_ij,
    solve_guide_space
)
from .synthdata import (
    SyntheticDataset,
    generate,
    nuisance_correlation_audit
)
from .training import (
    Trainer,
    dump_features,
    evaluate,
    load_models,
    save_models
)
from .decoupling import export_cluster_assignments
from .training.metrics import (
    accuracy,
    roc_auc
)
from .variants import (
    get_all_variants,
    get_variant
)
from .formatting.format import (
    TableFormatter,
    format_angle_matrix
)
from .output.continuous_write import (
    ContinuousWriter,
    read_csv_rows,
    write_json_document
)
from .utils.core import safe_print

from .debugging import log

from .errors import (
    ConfigError,
    GuidedDGError,
    InvalidParameter
)


RESULT_COLUMNS = ['variant', 'value', 'seed', 'heldout_auc', 'heldout_acc',
                  'in_domain_auc', 'in_domain_acc']
CONFIDENCE_COLUMNS = ['epoch', 'iteration', 'sample_index', 'confidence', 'weight']


def solve_for(cfg, spec):
    """Solve the guide-space matching a training config and benchmark."""
    gs, report = solve_guide_space(cfg.feature_dim, spec.n_train_forgery, cfg.theta0,
                                   seed=cfg.seed, tau=cfg.tau)
    log('info', f'Guide-space solved (d={gs.d}, N={gs.N}, theta0={gs.theta0}) '
        f'in {report.iterations} iterations.')
    return gs


def run_training(cfg, spec, output_dir, config_path=None, space=None, data=None):
    """Populate a run directory: manifest, guide-space, cluster labels, metrics and model.

    :return: (encoder, classifier, records, dataset)
    """
    os.makedirs(output_dir, exist_ok=True)

    if data is not None:
        dataset = SyntheticDataset.load(data)
        spec = dataset.spec
    else:
        dataset = generate(spec)
    nuisance_correlation_audit(dataset)

    manifest = RunManifest.create(cfg, spec, output_dir, config_path)
    manifest.save()

    gs = GuideSpace.load(space) if space else solve_for(cfg, spec)
    gs.save(os.path.join(output_dir, 'space.json'))

    confidence_writer = None
    if cfg.adbm_dump:
        confidence_writer = ContinuousWriter(
            os.path.join(output_dir, 'confidences.csv'), columns=CONFIDENCE_COLUMNS)
    try:
        with ContinuousWriter(os.path.join(output_dir, 'metrics.jsonl')) as metrics_writer:
            trainer = Trainer(dataset, cfg, gs, metrics_writer, confidence_writer)
            export_cluster_assignments(os.path.join(output_dir, 'clusters.csv'),
                                       dataset.train.t, trainer.clusters.labels)
            records = trainer.fit()
    finally:
        if confidence_writer is not None:
            confidence_writer.close()

    encoder, classifier = trainer.encoder, trainer.classifier
    save_models(os.path.join(output_dir, 'model.json'), encoder, classifier)
    log('info', f'Run written to "{output_dir}".')
    return encoder, classifier, records, dataset


def _run_task(task):
    """Train one (variant or value, seed) cell of a grid and evaluate it."""
    encoder, classifier, _, dataset = run_training(task['cfg'], task['spec'], task['out'])
    heldout_acc, heldout_auc = evaluate(encoder, classifier, dataset.heldout)
    in_acc, in_auc = evaluate(encoder, classifier, dataset.test)
    return {
        'variant': task['variant'],
        'value': task['value'],
        'seed': task['seed'],
        'heldout_auc': heldout_auc,
        'heldout_acc': heldout_acc,
        'in_domain_auc': in_auc,
        'in_domain_acc': in_acc
    }


def run_grid(tasks, jobs=1):
    """Run grid cells, in worker processes when ``jobs`` > 1. Results keep
    the task order."""
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(_run_task, tasks))
    return [_run_task(task) for task in tasks]


def group_means(results, key):
    groups = {}
    for row in results:
        groups.setdefault(row[key], []).append(row)
    return {
        name: {column: float(np.mean([row[column] for row in rows]))
               for column in RESULT_COLUMNS[3:]}
        for name, rows in groups.items()
    }


def ablation_order_violations(means):
    """Soft ordering checks on mean held-out AUC per variant: full >= no-push >=
    no-pull, and removing the guide loss costs at least as much as removing
    both decoupling losses.

    :return: Descriptions of the violated checks
    :rtype: list[str]
    """
    auc = {name: values['heldout_auc'] for name, values in means.items()}
    violations = []
    if {'full', 'no-push', 'no-pull'} <= set(auc):
        if not auc['full'] >= auc['no-push'] >= auc['no-pull']:
            violations.append(
                f'expected full >= no-push >= no-pull, got {auc["full"]:.4f}, '
                f'{auc["no-push"]:.4f}, {auc["no-pull"]:.4f}')
    if {'full', 'no-guide', 'no-decouple'} <= set(auc):
        guide_drop = auc['full'] - auc['no-guide']
        decouple_drop = auc['full'] - auc['no-decouple']
        if guide_drop < decouple_drop:
            violations.append(
                f'removing the guide loss costs {guide_drop:.4f} AUC, less than '
                f'removing decoupling ({decouple_drop:.4f})')
    return violations


def theta_trend_violations(means, best=120.0, others=(90.0, 150.0)):
    """Check that mean held-out AUC at ``best`` is at least that at ``others``."""
    auc = {float(value): values['heldout_auc'] for value, values in means.items()}
    if best not in auc:
        return []
    return [f'held-out AUC at theta0={best:g} ({auc[best]:.4f}) is below '
            f'theta0={other:g} ({auc[other]:.4f})'
            for other in others if other in auc and auc[best] < auc[other]]


def _cast_values(name, values):
    types = {f.name: f.type for f in fields(TrainConfig)}
    if name not in types:
        raise InvalidParameter(
            f'Cannot sweep "{name}", expected a training config field.')
    kind = types[name]
    if kind is bool:
        raise InvalidParameter(f'Cannot sweep the boolean field "{name}".')
    if kind is int:
        return [int(value) for value in values]
    if kind is float:
        return [float(value) for value in values]
    return list(values)


class Experiment():
    """Class used to solve guide-spaces, generate data, train and evaluate."""

    def __init__(self, quiet=False):
        """Create an Experiment object.

        :param quiet: Suppress tables printed to standard output, defaults to False
        :type quiet: bool, optional
        """
        self.quiet = quiet
        log('debug', f'Python version: {sys.version}')
        log('debug', f'Program version: {__version__}')

    def print(self, *items):
        if not self.quiet:
            safe_print(*items)

    @staticmethod
    def _resolve(config, overrides):
        file_values = load_config(config) if config else {}
        return resolve(file_values, overrides)

    def solve_space(self, dim=16, num_forgery=4, theta0=120.0, seed=0, tau=1.0, out=None):
        """Solve a guide-space and print the pairwise angles of its forgery embeddings.

        :param dim: Feature dimension d, defaults to 16
        :type dim: int, optional
        :param num_forgery: Number N of forgery domains, defaults to 4
        :type num_forgery: int, optional
        :param theta0: Angle in degrees between the real and every forgery
            embedding, defaults to 120
        :type theta0: float, optional
        :param seed: Seed of the real embedding and the initial iterate, defaults to 0
        :type seed: int, optional
        :param tau: Temperature of the separation objective, defaults to 1
        :type tau: float, optional
        :param out: Path of the guide-space JSON file, defaults to None (do not save)
        :type out: str, optional
        :return: The guide-space and the solver report
        :rtype: tuple[GuideSpace, SolverReport]
        """
        gs, report = solve_guide_space(dim, num_forgery, theta0, seed=seed, tau=tau)

        if out:
            write_json_document(out, {**gs.json(), 'report': report.json()})
            log('info', f'Guide-space written to "{out}".')

        angles = report.pairwise_angles_deg
        self.print(format_angle_matrix(angles))
        if num_forgery >= 2:
            off_diagonal = angles[~np.eye(num_forgery, dtype=bool)]
            self.print(f'mean theta_ij: {off_diagonal.mean():.2f} deg '
                       f'(symmetric optimum {analytic_theta_ij(theta0, num_forgery):.2f} deg)')
        return gs, report

    def gen_data(self, config=None, out='data', **overrides):
        """Generate the synthetic benchmark and write its splits as CSV.

        :param config: Path of a JSON config file, defaults to None
        :type config: str, optional
        :param out: Output directory, defaults to 'data'
        :type out: str, optional
        :return: The dataset
        :rtype: SyntheticDataset
        """
        _, spec = self._resolve(config, overrides)
        dataset = generate(spec)
        nmi = nuisance_correlation_audit(dataset)
        dataset.save(out)
        log('info', f'Dataset written to "{out}" (domain/cluster NMI {nmi:.4f}).')
        return dataset

    def train(self, config=None, out='run', space=None, data=None, **overrides):
        """Train an encoder and classifier and write a run directory.

        :param config: Path of a JSON config file or run manifest, defaults to None
        :type config: str, optional
        :param out: Run directory, defaults to 'run'
        :type out: str, optional
        :param space: Guide-space JSON file, defaults to None (solve from the config)
        :type space: str, optional
        :param data: Dataset directory, defaults to None (generate from the config)
        :type data: str, optional
        :return: One record per epoch
        :rtype: list[MetricsRecord]
        """
        cfg, spec = self._resolve(config, overrides)
        _, _, records, _ = run_training(cfg, spec, out, config, space, data)
        if records:
            last = records[-1]
            self.print(f'in-domain AUC {last.in_domain_auc:.4f}, '
                       f'held-out AUC {last.heldout_auc:.4f}')
        return records

    def _load_run(self, run, data=None):
        manifest = RunManifest.load(run)
        cfg, spec = manifest.resolve()
        encoder, classifier = load_models(os.path.join(run, 'model.json'), cfg)
        dataset = SyntheticDataset.load(data) if data else generate(spec)
        return encoder, classifier, dataset

    def eval(self, scores=None, run=None, data=None, split='heldout', out=None):
        """Compute accuracy and AUC from a scores file or a trained run.

        :param scores: CSV file with columns score and y, defaults to None
        :type scores: str, optional
        :param run: Run directory, used when no scores file is given, defaults to None
        :type run: str, optional
        :param data: Dataset directory, defaults to None (regenerate from the manifest)
        :type data: str, optional
        :param split: Split to evaluate on, defaults to 'heldout'
        :type split: str, optional
        :param out: JSON file receiving the metrics, defaults to None
        :type out: str, optional
        :return: (accuracy, auc)
        :rtype: tuple[float, float]
        """
        if scores:
            try:
                rows = read_csv_rows(scores)
                values = [float(row['score']) for row in rows]
                labels = [int(row['y']) for row in rows]
            except (OSError, KeyError, ValueError) as e:
                raise ConfigError(f'Unable to read scores file "{scores}": {e}')
            acc, auc = accuracy(values, labels), roc_auc(values, labels)
        elif run:
            encoder, classifier, dataset = self._load_run(run, data)
            acc, auc = evaluate(encoder, classifier, dataset.split(split))
        else:
            raise InvalidParameter('Either a scores file or a run directory is required.')

        self.print(f'Acc {acc:.4f}  AUC {auc:.4f}')
        if out:
            write_json_document(out, {'split': None if scores else split,
                                      'accuracy': acc, 'auc': auc})
        return acc, auc

    def dump_features(self, run, data=None, split='test', out='features.csv'):
        """Write the encoder features of a split for external plotting.

        :param run: Run directory
        :type run: str
        :param data: Dataset directory, defaults to None (regenerate from the manifest)
        :type data: str, optional
        :param split: Split to encode, defaults to 'test'
        :type split: str, optional
        :param out: Output CSV file, defaults to 'features.csv'
        :type out: str, optional
        """
        encoder, _, dataset = self._load_run(run, data)
        dump_features(encoder, dataset.split(split), out)
        log('info', f'Features of the {split} split written to "{out}".')

    def _grid_tasks(self, cells, spec, seeds, out):
        tasks = []
        for label, value, cfg in cells:
            for offset in range(seeds):
                seed = cfg.seed + offset
                tasks.append({
                    'variant': label,
                    'value': value,
                    'seed': seed,
                    'cfg': cfg.override(seed=seed),
                    'spec': replace(spec, seed=spec.seed + offset),
                    'out': os.path.join(out, str(label), f'seed_{seed}')
                })
        return tasks

    def _report(self, results, key, out, file_name):
        with ContinuousWriter(os.path.join(out, file_name), columns=RESULT_COLUMNS) as writer:
            writer.write_all(results)
        means = group_means(results, key)
        rows = [{key: name, **values} for name, values in means.items()]
        self.print(TableFormatter([key] + RESULT_COLUMNS[3:]).format(rows))
        return means

    def ablate(self, config=None, out='ablation', seeds=1, jobs=1, variants=None, **overrides):
        """Train every ablation variant over several seeds and compare held-out AUC.

        :param config: Path of a JSON config file, defaults to None
        :type config: str, optional
        :param out: Output directory, defaults to 'ablation'
        :type out: str, optional
        :param seeds: Number of seeds per variant, defaults to 1
        :type seeds: int, optional
        :param jobs: Number of worker processes, defaults to 1
        :type jobs: int, optional
        :param variants: Names of the variants to run, defaults to None (all)
        :type variants: list, optional
        :return: One result row per (variant, seed)
        :rtype: list[dict]
        """
        if seeds < 1 or jobs < 1:
            raise InvalidParameter('seeds and jobs must be positive.')
        cfg, spec = self._resolve(config, overrides)
        selected = [get_variant(name) for name in variants] if variants else get_all_variants()

        cells = [(variant.name(), None, variant.apply(cfg)) for variant in selected]
        results = run_grid(self._grid_tasks(cells, spec, seeds, out), jobs)
        means = self._report(results, 'variant', out, 'ablation.csv')

        for violation in ablation_order_violations(means):
            log('warning', f'Ablation ordering: {violation}.')
        return results

    def sweep(self, param, values, config=None, out='sweep', seeds=1, jobs=1, **overrides):
        """Train over a list of values of one training config field.

        :param param: Name of the training config field to vary, e.g. theta0
        :type param: str
        :param values: Values of the field
        :type values: list
        :param config: Path of a JSON config file, defaults to None
        :type config: str, optional
        :param out: Output directory, defaults to 'sweep'
        :type out: str, optional
        :param seeds: Number of seeds per value, defaults to 1
        :type seeds: int, optional
        :param jobs: Number of worker processes, defaults to 1
        :type jobs: int, optional
        :return: One result row per (value, seed)
        :rtype: list[dict]
        """
        if seeds < 1 or jobs < 1:
            raise InvalidParameter('seeds and jobs must be positive.')
        values = _cast_values(param, values)
        cfg, spec = self._resolve(config, overrides)

        cells = []
        for value in values:
            cell_cfg = cfg.override(**{param: value}).validate()
            cells.append((f'{param}={value}', value, cell_cfg))
        results = run_grid(self._grid_tasks(cells, spec, seeds, out), jobs)
        means = self._report(results, 'value', out, 'sweep.csv')

        if param == 'theta0':
            for violation in theta_trend_violations(means):
                log('warning', f'theta0 trend: {violation}.')
        return results


def run(command, propagate_interrupt=False, quiet=False, **kwargs):
    """
    Run one experiment command and map its outcome to an exit code:
    0 on success, 2 for invalid parameters or configs, 1 for other failures.
    """
    experiment = Experiment(quiet=quiet)
    method = getattr(experiment, command.replace('-', '_'), None)
    if method is None:
        log('error', f'Unknown command "{command}".')
        return 2

    try:
        method(**kwargs)
        return 0

    except InvalidParameter as e:  # usage and config errors
        log('error', e)
        return 2

    except GuidedDGError as e:
        log('error', e)
        return 1

    except OSError as e:
        log('error', f'File error: {e}')
        return 1

    except KeyboardInterrupt as e:
        if propagate_interrupt:
            raise e
        log('error', 'Keyboard Interrupt')
        return 1

# Copyright 2026 The Semi-MSM authors
#
# This file is part of Semi-MSM.
#
# Semi-MSM is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# Semi-MSM is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Semi-MSM.  If not, see <https://www.gnu.org/licenses/>.

import argparse
import os
import sys
import warnings
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

import attr
import numpy as np

from semi_msm.config import RunConfig, SIMULATION_DESIGN, load_config, save_config, with_overrides, make_header
from semi_msm.core import Panel, Edge, read_panel_csv, write_panel_csv, parse_edge, format_edge, \
    transition_counts, state_occupancy
from semi_msm.errors import ValidationError, NumericalError, MissingTruth
from semi_msm.fit import FitMode, SearchSpace, sample_configs, grid_search
from semi_msm.loans import simulate_loan_book, LOAN_BOOK_DESIGN
from semi_msm.metrics import transform_error_report
from semi_msm.output.csv import read_q_csv, write_pi_csv, write_predictions_csv, write_aj_csv, \
    write_counts_csv, write_occupancy_csv, write_metrics_csv
from semi_msm.output.json import FitReport, EdgeFitSummary, TruthFile, MetricReportFile, TransformErrorRow, \
    TransformComparisonFile, GridSearchFile, FIT_REPORT_NAME, write_artifact, write_csv_metadata, save_models, \
    load_models, load_truth
from semi_msm.output.txt import write_txt
from semi_msm.pipeline import fit_models, predict_distributions, evaluate_models, compare_transforms, \
    shared_woe_maps, transition_datasets
from semi_msm.sim import default_dgp, simulate_panel, aalen_johansen, NONLINEAR_CATALOGUE_VERSION
from semi_msm.transitions import TransformMethod, pi_rows

MSM_DESCRIPTION = """
Semi-structured discrete-time multi-state transition models.

Fits one binary logit per permissible transition (structured additive part plus
an orthogonalised neural part), converts them to competing transition
probabilities, compounds them and evaluates the predicted state distributions.
"""

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def span(s: str) -> Tuple[int, int]:
    try:
        t1, t2 = (int(v) for v in s.split('-'))
    except ValueError:
        raise argparse.ArgumentTypeError("Invalid span '{}', expected T1-T2, like '6-12'".format(s)) from None
    if not 0 <= t1 < t2:
        raise argparse.ArgumentTypeError("Invalid span '{}': need 0 <= T1 < T2".format(s))
    return t1, t2


def span_list(s: str) -> List[Tuple[int, int]]:
    return [span(part) for part in s.split(',') if part]


def named_model(s: str) -> Tuple[str, str]:
    if '=' not in s:
        return os.path.basename(os.path.normpath(s)), s
    name, path = s.split('=', 1)
    return name, path


def edge(s: str) -> Edge:
    try:
        return parse_edge(s)
    except ValidationError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def method(s: str) -> TransformMethod:
    try:
        return TransformMethod[s.upper()]
    except KeyError:
        raise argparse.ArgumentTypeError("Unknown method '{}', use exact or continuous".format(s)) from None


def add_extraction_flags(parser: argparse.ArgumentParser) -> None:
    """Flags that change which rows each edge is fitted on. They override the config file."""
    parser.add_argument(
        '--keep-competing-as-zero', action=argparse.BooleanOptionalAction, default=None,
        help="Keep the rows where the subject moved to a competing state, labelled 0.",
    )
    parser.add_argument(
        '--per-edge-woe', action=argparse.BooleanOptionalAction, default=None,
        help="Fit WOE maps separately for every edge instead of once on the entry edge.",
    )


class MsmCommand:
    def __init__(self) -> None:
        # pylint: disable=too-many-statements
        self.argparser = argparse.ArgumentParser(description=MSM_DESCRIPTION)
        self.argparser.add_argument('--seed', type=int, default=None, help="Master seed. Overrides the config file.")
        self.argparser.add_argument(
            '--threads', '-j', type=int, default=None,
            help="Worker processes for independent units (edges, bootstrap replicates, grid points). 1 means single process mode."
        )
        self.argparser.add_argument('--config', default=None, help="Run configuration (JSON).")
        subparsers = self.argparser.add_subparsers(dest='command', metavar='command')
        subparsers.required = True

        simulate = subparsers.add_parser('simulate', help="Simulate a panel from the data generating process.")
        simulate.add_argument('--n', type=int, default=1000, help="Number of subjects (loans).")
        simulate.add_argument('--t', type=int, default=36, help="Months of follow-up.")
        simulate.add_argument('--sigma', type=float, default=0.05, help="Random walk sigma of the baselines.")
        simulate.add_argument('--no-interaction', action='store_true', help="Leave out the x1*x2 interaction.")
        simulate.add_argument(
            '--loan-book', action='store_true',
            help="Simulate a synthetic mortgage book with credit covariates instead.",
        )
        simulate.add_argument('--out', required=True, help="Panel CSV to write.")
        simulate.add_argument('--truth', default=None, help="Truth JSON to write.")
        simulate.add_argument('--write-config', default=None, help="Write a run configuration matching the panel.")

        fit = subparsers.add_parser('fit', help="Fit one model per permissible transition.")
        fit.add_argument('--panel', required=True)
        fit.add_argument('--out', required=True, help="Directory for the model files and the fit report.")
        fit.add_argument('--mode', choices=('semi_structured', 'structured_only'), default=None)
        fit.add_argument('--bootstrap', type=int, default=None, help="Subject bootstrap replicates for intervals.")
        add_extraction_flags(fit)

        predict = subparsers.add_parser('predict', help="Predict state distributions at T2 given the state at T1.")
        predict.add_argument('--models', required=True, help="Model directory written by 'fit'.")
        predict.add_argument('--panel', required=True)
        predict.add_argument('--t1', type=int, required=True)
        predict.add_argument('--t2', type=int, required=True)
        predict.add_argument('--method', type=method, default=TransformMethod.EXACT, help="exact or continuous")
        predict.add_argument('--out', required=True)

        transform = subparsers.add_parser('transform', help="Convert per-edge q (columns q01, q10, ...) to pi.")
        transform.add_argument('--q', required=True)
        transform.add_argument('--method', type=method, default=TransformMethod.EXACT, help="exact or continuous")
        transform.add_argument('--out', required=True)

        evaluate = subparsers.add_parser('evaluate', help="Discrimination, calibration and accuracy by span.")
        evaluate.add_argument(
            '--model', dest='models', action='append', type=named_model, required=True,
            help="NAME=DIR of a fitted model directory. Can be repeated.",
        )
        evaluate.add_argument('--panel', required=True)
        evaluate.add_argument('--calibration-panel', default=None, help="Panel used to calibrate the cut-points.")
        evaluate.add_argument('--spans', type=span_list, default=[(6, 12), (12, 18), (18, 24)])
        evaluate.add_argument('--bins', type=int, default=10, help="ECE bins.")
        evaluate.add_argument('--out', default=None, help="Report JSON.")
        evaluate.add_argument('--csv', default=None, help="Report CSV.")

        compare = subparsers.add_parser('compare-transforms', help="Exact vs continuous-time transform errors.")
        compare.add_argument('--truth', action='append', required=True, help="Truth JSON, one per replicate.")
        compare.add_argument('--panel', action='append', required=True, help="Panel CSV, one per replicate.")
        compare.add_argument('--models', action='append', default=None, help="Model directory, one per replicate.")
        compare.add_argument('--subjects', type=int, default=1000)
        compare.add_argument('--t2', type=int, default=None, help="Defaults to the simulated horizon.")
        compare.add_argument('--out', default=None, help="Report JSON.")

        aj = subparsers.add_parser('aj', help="Aalen-Johansen cumulative transition probabilities.")
        aj.add_argument('--panel', required=True)
        aj.add_argument('--start', type=int, default=0)
        aj.add_argument('--out', required=True)

        search = subparsers.add_parser('grid-search', help="Pick fit hyperparameters of one edge by validation loss.")
        search.add_argument('--panel', required=True)
        search.add_argument('--edge', type=edge, required=True)
        search.add_argument('--samples', type=int, default=10, help="Configurations drawn from the search space.")
        search.add_argument('--replicates', type=int, default=2)
        add_extraction_flags(search)
        search.add_argument('--out', required=True)

        counts = subparsers.add_parser('counts', help="Transition counts and state occupancy.")
        counts.add_argument('--panel', required=True)
        counts.add_argument('--distinct-loans', action='store_true', help="Count each transition type once per subject.")
        counts.add_argument('--out', default=None)
        counts.add_argument('--occupancy', default=None)

    def run(self, argv: Sequence[str]) -> int:
        parsed_args = self.argparser.parse_args(argv)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            try:
                config = self.load_run_config(parsed_args)
                getattr(self, 'cmd_' + parsed_args.command.replace('-', '_'))(parsed_args, config)
                result = 0
            except ValidationError as e:
                print("Error: {}".format(e), file=sys.stderr)
                result = EXIT_VALIDATION
            except NumericalError as e:
                print("Numerical failure: {}".format(e), file=sys.stderr)
                result = EXIT_NUMERICAL
            except OSError as e:
                print("Error: {}".format(e), file=sys.stderr)
                result = EXIT_VALIDATION
        for w in caught:
            print("Warning: {}".format(w.message), file=sys.stderr)
        return result

    @classmethod
    def load_run_config(cls, parsed_args: argparse.Namespace) -> RunConfig:
        config = RunConfig()
        if parsed_args.config is not None:
            with open(parsed_args.config, 'r', encoding='utf-8') as f:
                config = load_config(f)
        return with_overrides(
            config,
            seed=parsed_args.seed,
            threads=parsed_args.threads,
            keep_competing_as_zero=getattr(parsed_args, 'keep_competing_as_zero', None),
            per_edge_woe=getattr(parsed_args, 'per_edge_woe', None),
        )

    @classmethod
    def read_panel(cls, path: str, config: RunConfig) -> Panel:
        print("Reading {}".format(path), file=sys.stderr)
        return read_panel_csv(path, config.space)

    @classmethod
    def cmd_simulate(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        if parsed_args.loan_book:
            if parsed_args.truth is not None:
                raise ValidationError("The loan book has no simulation truth")
            print("Simulating a book of {} loans over {} months".format(parsed_args.n, parsed_args.t), file=sys.stderr)
            panel = simulate_loan_book(parsed_args.n, parsed_args.t, config.seed, config.space)
            matching_config = attr.evolve(config, design=LOAN_BOOK_DESIGN)
        else:
            spec = default_dgp(
                parsed_args.n, parsed_args.t, seed=config.seed, rw_sigma=parsed_args.sigma,
                include_interaction=not parsed_args.no_interaction,
            )
            print("Simulating {} subjects over {} months".format(spec.n_subjects, spec.T), file=sys.stderr)
            panel, _ = simulate_panel(spec)
            matching_config = attr.evolve(config, space=spec.space, design=SIMULATION_DESIGN)
            if parsed_args.truth is not None:
                print("Writing {}".format(parsed_args.truth), file=sys.stderr)
                write_artifact(
                    TruthFile(make_header('truth', config), spec, NONLINEAR_CATALOGUE_VERSION),
                    parsed_args.truth,
                )
        print("Writing {}".format(parsed_args.out), file=sys.stderr)
        write_panel_csv(panel, parsed_args.out)
        write_csv_metadata(parsed_args.out, make_header('panel', config))
        if parsed_args.write_config is not None:
            print("Writing {}".format(parsed_args.write_config), file=sys.stderr)
            with open(parsed_args.write_config, 'w', encoding='utf-8') as f:
                save_config(matching_config, f)

    @classmethod
    def cmd_fit(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        if parsed_args.mode is not None:
            mode = FitMode[parsed_args.mode.upper()]
            config = attr.evolve(
                config,
                fit=attr.evolve(config.fit, mode=mode),
                edge_fit={k: attr.evolve(v, mode=mode) for k, v in config.edge_fit.items()},
            )
        if parsed_args.bootstrap is not None:
            config = with_overrides(config, bootstrap_replicates=parsed_args.bootstrap)
        panel = cls.read_panel(parsed_args.panel, config)
        if config.threads > 1:
            worker_mode = "using at most {} worker processes".format(config.threads)
        else:
            worker_mode = "using single-threaded mode"
        print("Fitting {} edges on {} subjects {}".format(len(config.space.edges), panel.n_subjects, worker_mode),
              file=sys.stderr)
        fitted = fit_models(panel, config)
        header = make_header('model', config)
        for e, path in save_models(fitted.models, parsed_args.out, header).items():
            print("Writing {} ({} epochs)".format(path, fitted.models[e].metadata.epochs_run), file=sys.stderr)
        report = FitReport(
            header=make_header('fit_report', config),
            edges=tuple(
                EdgeFitSummary(
                    e, m.mode, len(m.column_names), m.metadata, fitted.bootstrap.get(e),
                ) for e, m in sorted(fitted.models.items())
            ),
            shared_woe=fitted.shared_woe,
        )
        write_artifact(report, os.path.join(parsed_args.out, FIT_REPORT_NAME))
        write_txt(report, sys.stderr)

    @classmethod
    def cmd_predict(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        models = load_models(parsed_args.models, config.space)
        panel = cls.read_panel(parsed_args.panel, config)
        predictions = predict_distributions(models, panel, parsed_args.t1, parsed_args.t2, parsed_args.method)
        for subject_id in predictions.skipped:
            print("Skipping subject {}: not observed at t1={}".format(subject_id, parsed_args.t1), file=sys.stderr)
        print("Writing {}".format(parsed_args.out), file=sys.stderr)
        write_predictions_csv(parsed_args.out, predictions.subject_ids, predictions.distributions)
        write_csv_metadata(parsed_args.out, make_header('predictions', config))

    @classmethod
    def cmd_transform(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        passthrough, q = read_q_csv(parsed_args.q, config.space)
        rows = pi_rows(q, parsed_args.method, config.space)
        print("Writing {}".format(parsed_args.out), file=sys.stderr)
        write_pi_csv(parsed_args.out, passthrough, rows, config.space)
        write_csv_metadata(parsed_args.out, make_header('pi', config))

    @classmethod
    def cmd_evaluate(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        models_by_name = {name: load_models(path, config.space) for name, path in parsed_args.models}
        if len(models_by_name) != len(parsed_args.models):
            raise ValidationError("Model names given to --model must be unique")
        panel = cls.read_panel(parsed_args.panel, config)
        if parsed_args.calibration_panel is not None:
            calibration_panel = cls.read_panel(parsed_args.calibration_panel, config)
        else:
            print("No calibration panel given, calibrating cut-points on the evaluation panel", file=sys.stderr)
            calibration_panel = panel
        rows, rules = evaluate_models(models_by_name, panel, parsed_args.spans, calibration_panel, parsed_args.bins)
        report = MetricReportFile(make_header('metrics', config), tuple(rows), rules)
        cls.write_outputs(report, parsed_args.out)
        if parsed_args.csv is not None:
            print("Writing {}".format(parsed_args.csv), file=sys.stderr)
            write_metrics_csv(parsed_args.csv, rows)
            write_csv_metadata(parsed_args.csv, make_header('metrics', config))

    @classmethod
    def cmd_compare_transforms(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        # pylint: disable=too-many-locals
        n_replicates = len(parsed_args.truth)
        if len(parsed_args.panel) != n_replicates:
            raise MissingTruth("Need exactly one --truth per --panel")
        if parsed_args.models is not None and len(parsed_args.models) != n_replicates:
            raise ValidationError("Need exactly one --models per --panel")
        truths: List[np.ndarray] = []
        estimates: Dict[Tuple[str, TransformMethod], List[np.ndarray]] = {}
        groups: List[np.ndarray] = []
        t2: Optional[int] = parsed_args.t2
        n_subjects = 0
        for r in range(n_replicates):
            spec = load_truth(parsed_args.truth[r])
            t2 = spec.T if t2 is None else t2
            replicate_config = attr.evolve(config, space=spec.space)
            panel = cls.read_panel(parsed_args.panel[r], replicate_config)
            models = None
            if parsed_args.models is not None:
                models = load_models(parsed_args.models[r], spec.space)
            result = compare_transforms(
                spec, panel, t2, parsed_args.subjects, models=models, seed=config.seed, replicate=r,
            )
            truths.append(result.true_cumulative)
            groups.append(np.full(len(result.true_cumulative), r))
            n_subjects = len(result.true_cumulative)
            for key, value in result.estimates.items():
                estimates.setdefault(key, []).append(value)
        assert t2 is not None
        true_all = np.concatenate(truths)
        group_all = np.concatenate(groups)
        rows = tuple(
            TransformErrorRow(source, m, transform_error_report(true_all, np.concatenate(values), group_all))
            for (source, m), values in sorted(estimates.items(), key=lambda kv: (kv[0][0], kv[0][1].name))
        )
        report = TransformComparisonFile(make_header('transform_comparison', config), t2, n_subjects, rows)
        cls.write_outputs(report, parsed_args.out)

    @classmethod
    def cmd_aj(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        panel = cls.read_panel(parsed_args.panel, config)
        estimate = aalen_johansen(panel, parsed_args.start)
        print("Writing {}".format(parsed_args.out), file=sys.stderr)
        write_aj_csv(parsed_args.out, estimate, config.space.transient_states)
        write_csv_metadata(parsed_args.out, make_header('aalen_johansen', config))

    @classmethod
    def cmd_grid_search(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        if parsed_args.edge not in config.space.edges:
            raise ValidationError("{} is not an edge of the state space".format(format_edge(parsed_args.edge)))
        panel = cls.read_panel(parsed_args.panel, config)
        datasets = transition_datasets(panel, config.keep_competing_as_zero)
        woe_maps = None if config.per_edge_woe else shared_woe_maps(config.design, datasets)
        space = config.search_space or SearchSpace()
        grid = sample_configs(space, parsed_args.samples, config.seed, base=config.fit_config(parsed_args.edge))
        print("Trying {} configurations for edge {}".format(len(grid), format_edge(parsed_args.edge)), file=sys.stderr)
        result = grid_search(
            datasets[parsed_args.edge], config.design, grid, parsed_args.replicates,
            woe_maps=woe_maps, workers=config.threads,
        )
        print("Best configuration: #{} (validation loss {:.6f})".format(result.best_index, result.scores[result.best_index]),
              file=sys.stderr)
        print("Writing {}".format(parsed_args.out), file=sys.stderr)
        write_artifact(GridSearchFile(make_header('grid_search', config), parsed_args.edge, result), parsed_args.out)

    @classmethod
    def cmd_counts(cls, parsed_args: argparse.Namespace, config: RunConfig) -> None:
        panel = cls.read_panel(parsed_args.panel, config)
        counts = transition_counts(panel, distinct_subjects=parsed_args.distinct_loans)
        write_txt(counts, sys.stdout)
        if parsed_args.out is not None:
            print("Writing {}".format(parsed_args.out), file=sys.stderr)
            write_counts_csv(parsed_args.out, counts)
            write_csv_metadata(parsed_args.out, make_header('counts', config))
        if parsed_args.occupancy is not None:
            print("Writing {}".format(parsed_args.occupancy), file=sys.stderr)
            write_occupancy_csv(parsed_args.occupancy, state_occupancy(panel))
            write_csv_metadata(parsed_args.occupancy, make_header('occupancy', config))

    @classmethod
    def write_outputs(cls, report: Any, json_path: Optional[str], output_file: Optional[TextIO] = None) -> None:
        if json_path is not None:
            print("Writing {}".format(json_path), file=sys.stderr)
            write_artifact(report, json_path)
        write_txt(report, output_file if output_file is not None else sys.stdout)

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

from typing import TextIO, Any, Callable, List, Tuple

from semi_msm.core import TransitionCounts
from semi_msm.output.json import TransformComparisonFile, FitReport, MetricReportFile
from semi_msm.transitions import TransformMethod

TxtWriterFn = Callable[[Any, TextIO], None]

all_txt_writers: List[Tuple[type, TxtWriterFn]] = []


def txt_writer(fn: TxtWriterFn) -> TxtWriterFn:
    all_txt_writers.append((fn.__annotations__['element'], fn))
    return fn


def mean_sd(mean: float, sd: Any) -> str:
    if sd is None:
        return "{:.4f}".format(mean)
    return "{:.4f} ({:.4f})".format(mean, sd)


def print_table(header: List[str], rows: List[List[str]], output_file: TextIO) -> None:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print('  '.join(cell.rjust(w) for cell, w in zip(r, widths)).rstrip(), file=output_file)


@txt_writer
def write_transform_comparison_as_txt(element: TransformComparisonFile, output_file: TextIO) -> None:
    for source in sorted(set(r.source for r in element.rows)):
        by_method = {r.method: r.report for r in element.rows if r.source == source}
        continuous = by_method[TransformMethod.CONTINUOUS]
        exact = by_method[TransformMethod.EXACT]
        print("== {}: cumulative 0 -> j at t2={}, {} subjects, {} replicate(s) ==".format(
            source, element.t2, element.n_subjects, exact.n_replicates), file=output_file)
        rows = []
        for j in range(len(exact.mse)):
            rows.append([
                "0 -> {}".format(j),
                mean_sd(continuous.mse[j], continuous.mse_sd[j] if continuous.mse_sd else None),
                mean_sd(exact.mse[j], exact.mse_sd[j] if exact.mse_sd else None),
                mean_sd(continuous.mae[j], continuous.mae_sd[j] if continuous.mae_sd else None),
                mean_sd(exact.mae[j], exact.mae_sd[j] if exact.mae_sd else None),
            ])
        print_table(['Target', 'MSE continuous', 'MSE discrete', 'MAE continuous', 'MAE discrete'], rows, output_file)
        print(file=output_file)


@txt_writer
def write_metric_report_as_txt(element: MetricReportFile, output_file: TextIO) -> None:
    rows = []
    notes = []
    for r in element.rows:
        rows.append(["{}-{}".format(*r.span), str(r.horizon), r.model, str(r.n_subjects)] + [
            "{:.4f}".format(v) for v in (r.multi_auc, r.auc_one_vs_all, r.brier, r.ece, r.accuracy)
        ])
        notes.extend("{} {}-{}: {}".format(r.model, r.span[0], r.span[1], n) for n in r.notes)
    print_table(['Span', 'h', 'Model', 'N', 'MultiAUC', 'AUC1vsA', 'Brier', 'ECE', 'ACC'], rows, output_file)
    for n in notes:
        print("Note: " + n, file=output_file)


@txt_writer
def write_fit_report_as_txt(element: FitReport, output_file: TextIO) -> None:
    rows = [
        [
            "{}-{}".format(*e.edge), e.mode.name.lower(), str(e.metadata.n_rows), str(e.n_columns),
            str(e.metadata.epochs_run), "{:.6f}".format(e.metadata.train_loss),
            "{:.6f}".format(e.metadata.validation_loss), "{:.2e}".format(e.metadata.orthogonality),
        ]
        for e in element.edges
    ]
    print_table(['Edge', 'Mode', 'Rows', 'Columns', 'Epochs', 'Train loss', 'Validation loss', 'Orthogonality'],
                rows, output_file)


@txt_writer
def write_counts_as_txt(element: TransitionCounts, output_file: TextIO) -> None:
    K = element.counts.shape[0]
    shares = element.shares()
    rows = [
        [str(k)] + ["{} ({:.2f}%)".format(element.counts[k, l], shares[k, l]) for l in range(K)]
        for k in range(K)
    ]
    print_table(['from \\ to'] + [str(l) for l in range(K)], rows, output_file)


def write_txt(element: Any, output_file: TextIO) -> None:
    for printable_type, printer in all_txt_writers:
        if isinstance(element, printable_type):
            printer(element, output_file)
            break
    else:
        raise TypeError("No text writer for {}".format(type(element)))

"""Deterministic text and CSV renderers for the three analysis reports.

No timestamps, no environment echoes: identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence

from .correlation import CorrelationTable
from .forest import AblationGrid, CLASSIFIER_OUTCOMES
from .glmm import (
    CONTROL_PREDICTORS,
    SENSOR_PREDICTORS,
    TRAIT_PREDICTORS_A,
    TRAIT_PREDICTORS_B,
    SuiteResult,
)

#: Row order of the model-suite reports.
SUITE_ROW_ORDER = (
    SENSOR_PREDICTORS + TRAIT_PREDICTORS_A + TRAIT_PREDICTORS_B + CONTROL_PREDICTORS
)


def _fmt_r(value: float) -> str:
    s = f"{value:.3f}"
    if s.startswith("0."):
        s = s[1:]
    elif s.startswith("-0."):
        s = "-" + s[2:]
    return s


def _fmt_coef(value: float) -> str:
    if value == 0:
        return "0"
    if 0.001 <= abs(value) < 10000:
        return f"{value:.3f}"
    return f"{value:.2e}"


def render_correlation_text(table: CorrelationTable) -> str:
    k = len(table.variables)
    width = max(len(v) for v in table.variables) + 4
    out = io.StringIO()
    out.write("Pearson correlations (pairwise complete observations)\n")
    out.write(f"n range: {int(table.n.min())}-{int(table.n.max())}\n\n")
    header = " " * (width + 3) + "".join(f"{i + 1:>9d}" for i in range(k))
    out.write(header + "\n")
    for i, name in enumerate(table.variables):
        cells = []
        for j in range(k):
            if j > i:
                cells.append(" " * 9)
            elif table.missing[i, j]:
                cells.append(f"{'--':>9}")
            else:
                cells.append(f"{_fmt_r(table.r[i, j]) + table.stars[i, j]:>9}")
        out.write(f"{i + 1:>2d} {name:<{width}}" + "".join(cells) + "\n")
    out.write("\n* p<.05; ** p<.01 (two-sided t test)\n")
    return out.getvalue()


def render_correlation_csv(table: CorrelationTable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["variable_a", "variable_b", "r", "p", "n", "stars", "missing"])
    k = len(table.variables)
    for i in range(k):
        for j in range(i, k):
            missing = bool(table.missing[i, j])
            w.writerow(
                [
                    table.variables[i],
                    table.variables[j],
                    "" if missing else repr(float(table.r[i, j])),
                    "" if missing else repr(float(table.p[i, j])),
                    int(table.n[i, j]),
                    table.stars[i, j],
                    int(missing),
                ]
            )
    return out.getvalue()


def _suite_rows(suite: SuiteResult) -> list:
    used = []
    for name in SUITE_ROW_ORDER:
        if any(name in e.spec.predictors for e in suite.entries):
            used.append(name)
    return used


def render_suite_text(suite: SuiteResult) -> str:
    out = io.StringIO()
    out.write(f"Multilevel logit models: {suite.outcome} (random intercepts)\n\n")
    names = suite.names
    label_w = 22
    col_w = 12
    out.write(" " * label_w + "".join(f"{n:>{col_w}}" for n in names) + "\n")

    def row(label: str, cells: Sequence[str]) -> None:
        out.write(f"{label:<{label_w}}" + "".join(f"{c:>{col_w}}" for c in cells) + "\n")

    for pred in _suite_rows(suite):
        cells = []
        for e in suite.entries:
            if pred in e.spec.predictors:
                cells.append(_fmt_coef(e.fit.coef(pred)) + e.fit.stars[e.fit.coef_names.index(pred)])
            else:
                cells.append("")
        row(pred, cells)
    row("constant", [_fmt_coef(e.fit.coef("const")) + e.fit.stars[0] for e in suite.entries])
    row("sigma_u2", [f"{e.fit.sigma_u2:.3f}" for e in suite.entries])
    row("ICC", [f"{e.fit.icc:.3f}" for e in suite.entries])
    row("groups", [str(e.fit.n_groups) for e in suite.entries])
    row("N", [str(e.fit.n_obs) for e in suite.entries])
    row("AIC", [f"{e.fit.aic:.2f}" for e in suite.entries])
    row("BIC", [f"{e.fit.bic:.2f}" for e in suite.entries])
    row("converged", ["yes" if e.fit.converged else "NO" for e in suite.entries])
    out.write("\n* p<.05; ** p<.01 (Wald)\n")
    return out.getvalue()


def render_suite_csv(suite: SuiteResult) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["model", "term", "estimate", "se", "p", "stars"])
    for e in suite.entries:
        fit = e.fit
        for i, name in enumerate(fit.coef_names):
            w.writerow(
                [
                    e.name,
                    name,
                    repr(float(fit.beta[i])),
                    repr(float(fit.se[i])),
                    repr(float(fit.p_values[i])),
                    fit.stars[i],
                ]
            )
        w.writerow([e.name, "sigma_u2", repr(float(fit.sigma_u2)), "", "", ""])
        w.writerow([e.name, "icc", repr(float(fit.icc)), "", "", ""])
        w.writerow([e.name, "loglik", repr(float(fit.loglik)), "", "", ""])
        w.writerow([e.name, "aic", repr(float(fit.aic)), "", "", ""])
        w.writerow([e.name, "bic", repr(float(fit.bic)), "", "", ""])
        w.writerow([e.name, "n_obs", fit.n_obs, "", "", ""])
        w.writerow([e.name, "n_groups", fit.n_groups, "", "", ""])
        w.writerow([e.name, "converged", int(fit.converged), "", "", ""])
    return out.getvalue()


def render_ablation_text(grid: AblationGrid, outcomes: Sequence[str] = CLASSIFIER_OUTCOMES) -> str:
    some = next(iter(grid.reports.values()))
    out = io.StringIO()
    out.write(
        f"Random-forest classification ({len(some.accuracies)} replicates, "
        f"random 30% test split)\n\n"
    )
    label_w = 18
    out.write(" " * label_w + "".join(f"{o:>22}" for o in outcomes) + "\n")
    out.write(
        " " * label_w + "".join(f"{'accuracy':>12}{'kappa':>10}" for _ in outcomes) + "\n"
    )
    for include_gps, label in ((True, "including GPS"), (False, "excluding GPS")):
        cells = []
        for o in outcomes:
            rep = grid.report(o, include_gps)
            cells.append(f"{rep.mean_accuracy:>12.4f}{rep.mean_kappa:>10.3f}")
        out.write(f"{label:<{label_w}}" + "".join(cells) + "\n")
    out.write("\nkappa is Cohen's chance-corrected agreement\n")
    return out.getvalue()


def render_ablation_csv(grid: AblationGrid, outcomes: Sequence[str] = CLASSIFIER_OUTCOMES) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(
        [
            "outcome",
            "condition",
            "mean_accuracy",
            "mean_kappa",
            "n_replicates",
            "n_rows",
            "n_redraws",
        ]
    )
    for o in outcomes:
        for include_gps, label in ((True, "including_gps"), (False, "excluding_gps")):
            rep = grid.report(o, include_gps)
            w.writerow(
                [
                    o,
                    label,
                    repr(rep.mean_accuracy),
                    repr(rep.mean_kappa),
                    len(rep.accuracies),
                    rep.n_rows,
                    rep.n_redraws,
                ]
            )
    return out.getvalue()

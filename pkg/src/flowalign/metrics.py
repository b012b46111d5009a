"""Alignment metrics: corner errors, their threshold AUCs, and reports.

AUC@tau is the area under the empirical CDF of corner errors over [0, tau],
normalized by tau and expressed in percent. The CDF is piecewise constant,
so the area has the closed form mean(max(0, tau - e)) / tau; no binning, no
estimator knobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AUC_THRESHOLDS = (3.0, 5.0, 10.0, 20.0)


class MetricError(ValueError):
    """Metric preconditions violated (empty inputs, unbalanced domains, ...)."""


def auc_at_threshold(errors, tau: float) -> float:
    """Exact percent-area under the corner-error CDF up to ``tau`` pixels."""
    if tau <= 0:
        raise MetricError(f"threshold must be positive, got {tau}")
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise MetricError("empty error list")
    if np.any(e < 0):
        raise MetricError("corner errors must be non-negative")
    return float(np.clip(tau - e, 0.0, tau).mean() / tau * 100.0)


@dataclass
class MetricsReport:
    """Per-sample corner errors plus their aggregates."""

    ace: list[float]
    mace: float
    auc: dict[float, float]
    count: int
    config_echo: str = ""
    extras: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"samples: {self.count}", f"mace_px: {self.mace:.6f}"]
        for tau in sorted(self.auc):
            out.append(f"auc@{tau:g}: {self.auc[tau]:.4f}")
        for key, val in self.extras.items():
            out.append(f"{key}: {val}")
        if self.config_echo:
            out.append(f"config: {self.config_echo}")
        return out

    def __str__(self) -> str:
        return "\n".join(self.lines())


def compute_report(ace_list, config_echo: str = "",
                   thresholds=AUC_THRESHOLDS) -> MetricsReport:
    ace = [float(a) for a in ace_list]
    if not ace:
        raise MetricError("cannot build a report from zero samples")
    return MetricsReport(
        ace=ace,
        mace=float(np.mean(ace)),
        auc={float(t): auc_at_threshold(ace, t) for t in thresholds},
        count=len(ace),
        config_echo=config_echo,
    )


def write_report(path, report: MetricsReport) -> None:
    """Machine-readable report: key-value block, then a per-sample table."""
    with open(path, "w", encoding="utf-8") as fp:
        for line in report.lines():
            fp.write(line + "\n")
        fp.write("sample\tace_px\n")
        for i, a in enumerate(report.ace):
            fp.write(f"{i}\t{a:.6f}\n")


def read_report(path) -> MetricsReport:
    """Parse a report written by write_report."""
    kv: dict[str, str] = {}
    ace: list[float] = []
    with open(path, "r", encoding="utf-8") as fp:
        in_table = False
        for line in fp:
            line = line.rstrip("\n")
            if line.startswith("sample\t"):
                in_table = True
                continue
            if in_table:
                if line:
                    ace.append(float(line.split("\t")[1]))
            elif ": " in line:
                key, val = line.split(": ", 1)
                kv[key] = val
    auc = {float(k[4:]): float(v) for k, v in kv.items() if k.startswith("auc@")}
    return MetricsReport(ace=ace, mace=float(kv["mace_px"]), auc=auc,
                         count=int(kv["samples"]), config_echo=kv.get("config", ""))

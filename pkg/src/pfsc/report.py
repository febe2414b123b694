"""End-to-end pipeline orchestration and report emission."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import assemble_problem, solve_coefficients
from .errors import ConfigError
from .loadflow import solve_load_flow
from .montecarlo import MCConfig, run_monte_carlo
from .network import build_admittance, load_network
from .uncertainty import (
    AdmittanceUncertainty,
    analytical_sigma,
    default_noise_config,
    it_class_to_polar,
    load_noise_config,
    project_polar_noise,
)

PRETTY_DECIMALS = 4


@dataclass(frozen=True)
class RunConfig:
    """Configuration of a full comparison run."""

    network: str
    noise_config: str | None = None
    mode: str = "both"  # analytical | mc | both
    n_mc: tuple[int, ...] = (1000,)
    sigma_y_pct: tuple[float, ...] = (1.0,)
    it_class: str = "0.5"
    out_dir: str | None = None
    seed: int = 1
    formats: tuple[str, ...] = ("csv",)
    coefficients: tuple | None = None  # (bus_i, bus_l, part, wrt) filter

    def __post_init__(self):
        if self.mode not in ("analytical", "mc", "both"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not Path(self.network).exists():
            raise ConfigError(f"network file not found: {self.network}")
        if self.noise_config is not None and not Path(self.noise_config).exists():
            raise ConfigError(f"noise config not found: {self.noise_config}")


@dataclass(frozen=True)
class CoefficientKey:
    """Identifies one real coefficient: d{Re|Im} E_i / d{P|Q}_l."""

    bus_i: int
    phase_i: int
    part: str  # "re" | "im"
    bus_l: int
    phase_l: int
    wrt: str  # "P" | "Q"

    def label(self, phase_count=1):
        part = "Re" if self.part == "re" else "Im"
        if phase_count == 1:
            return f"{part}(dE{self.bus_i}/d{self.wrt}{self.bus_l})"
        ph = "abc"
        return (
            f"{part}(dE{self.bus_i}{ph[self.phase_i]}"
            f"/d{self.wrt}{self.bus_l}{ph[self.phase_l]})"
        )


@dataclass
class ComparisonReport:
    """Per-coefficient nominal values and stds from both methods."""

    keys: list[CoefficientKey]
    nominal: np.ndarray
    analytical: dict = field(default_factory=dict)  # sigma_pct -> stds
    mc: dict = field(default_factory=dict)  # (sigma_pct, n_mc) -> stds
    timings: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def percent_of_nominal(self, stds):
        with np.errstate(divide="ignore", invalid="ignore"):
            return 100.0 * stds / np.abs(self.nominal)


def _all_keys(problem):
    keys = []
    p = problem.phase_count
    nonslack_pairs = [
        (problem.bus_indices[flat // p], flat % p) for flat in problem.nonslack
    ]
    for bus_i, ph_i in nonslack_pairs:
        for part in ("re", "im"):
            for bus_l, ph_l in nonslack_pairs:
                for wrt in ("P", "Q"):
                    keys.append(
                        CoefficientKey(bus_i, ph_i, part, bus_l, ph_l, wrt)
                    )
    return keys


def _key_indices(problem, key: CoefficientKey):
    return (
        problem.row(key.bus_i, key.phase_i, key.part),
        problem.column(key.bus_l, key.phase_l, key.wrt),
    )


def run_pipeline(cfg: RunConfig) -> ComparisonReport:
    """Load flow, coefficient solve, then analytical and/or MC stds."""
    timings = {}
    t0 = time.perf_counter()
    network = load_network(cfg.network)
    Y = build_admittance(network)
    state = solve_load_flow(network, Y)
    timings["load_flow_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    problem = assemble_problem(Y, state, network)
    result = solve_coefficients(problem, voltages=state.voltages)
    timings["coefficients_s"] = time.perf_counter() - t0

    noise_cfg = (
        load_noise_config(cfg.noise_config)
        if cfg.noise_config
        else default_noise_config()
    )
    polar = it_class_to_polar(cfg.it_class, noise_cfg)

    keys = _all_keys(problem)
    if cfg.coefficients is not None:
        wanted = {tuple(c) for c in cfg.coefficients}
        keys = [
            k for k in keys if (k.bus_i, k.bus_l, k.part, k.wrt) in wanted
        ]
    idx = [_key_indices(problem, k) for k in keys]
    rows = np.array([i for i, _ in idx])
    cols = np.array([j for _, j in idx])
    nominal = result.x[rows, cols] if keys else np.zeros(0)

    report = ComparisonReport(
        keys=keys,
        nominal=nominal,
        timings=timings,
        meta={
            "network": str(cfg.network),
            "it_class": str(cfg.it_class),
            "seed": cfg.seed,
            "mode": cfg.mode,
            "phase_count": problem.phase_count,
        },
    )

    for lvl in cfg.sigma_y_pct:
        yu = AdmittanceUncertainty.from_relative(Y, lvl)
        if cfg.mode in ("analytical", "both"):
            t0 = time.perf_counter()
            en = project_polar_noise(state, polar)
            unc = analytical_sigma(problem, result, Y, state, yu, en)
            timings[f"analytical_s[{lvl}]"] = time.perf_counter() - t0
            report.analytical[lvl] = (
                unc.sigma[rows, cols] if keys else np.zeros(0)
            )
        if cfg.mode in ("mc", "both"):
            for n in cfg.n_mc:
                mc_cfg = MCConfig(
                    n_trials=n, seed=cfg.seed, polar=polar, yu=yu
                )
                mc = run_monte_carlo(network, Y, state, mc_cfg)
                timings[f"mc_s[{lvl},{n}]"] = mc.runtime_s
                report.mc[(lvl, n)] = mc.std[rows, cols] if keys else np.zeros(0)
    return report


# -- emission ----------------------------------------------------------------


def emit_report(report: ComparisonReport, formats, out_dir) -> list[Path]:
    """Write the report in the requested formats; returns the paths written.

    CSV: one file per admittance-std level with columns
    {coefficient, nominal_pu, std_analytical, std_mc_<n>..., time_s}.
    JSON: a single file carrying all levels plus percents and timings.
    Pretty text: fixed-point table, 4 decimals.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    levels = sorted(
        set(report.analytical) | {lvl for lvl, _ in report.mc}
    )
    n_mcs = sorted({n for _, n in report.mc})
    p = report.meta.get("phase_count", 1)
    labels = [k.label(p) for k in report.keys]

    for fmt in formats:
        if fmt == "csv":
            for lvl in levels:
                path = out_dir / f"report_sigmaY_{lvl:g}pct.csv"
                total = sum(
                    v
                    for k, v in report.timings.items()
                    if f"[{lvl}" in k or k in ("load_flow_s", "coefficients_s")
                )
                header = ["coefficient", "nominal_pu"]
                if lvl in report.analytical:
                    header.append("std_analytical")
                header += [f"std_mc_{n}" for n in n_mcs if (lvl, n) in report.mc]
                header.append("time_s")
                with open(path, "w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(header)
                    for i, label in enumerate(labels):
                        row = [label, repr(float(report.nominal[i]))]
                        if lvl in report.analytical:
                            row.append(repr(float(report.analytical[lvl][i])))
                        for n in n_mcs:
                            if (lvl, n) in report.mc:
                                row.append(repr(float(report.mc[(lvl, n)][i])))
                        row.append(repr(float(total)))
                        writer.writerow(row)
                written.append(path)
        elif fmt == "json":
            path = out_dir / "report.json"
            doc = {
                "meta": report.meta,
                "timings": report.timings,
                "coefficients": labels,
                "nominal_pu": [float(v) for v in report.nominal],
                "analytical": {
                    str(lvl): {
                        "std": [float(v) for v in stds],
                        "pct_of_nominal": [
                            float(v) for v in report.percent_of_nominal(stds)
                        ],
                    }
                    for lvl, stds in sorted(report.analytical.items())
                },
                "monte_carlo": {
                    f"{lvl}|{n}": {
                        "std": [float(v) for v in stds],
                        "pct_of_nominal": [
                            float(v) for v in report.percent_of_nominal(stds)
                        ],
                    }
                    for (lvl, n), stds in sorted(report.mc.items())
                },
            }
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(path)
        elif fmt == "pretty-text":
            path = out_dir / "report.txt"
            written.append(_emit_pretty(report, labels, levels, n_mcs, path))
        else:
            raise ConfigError(f"unknown report format {fmt!r}")
    return written


def _emit_pretty(report, labels, levels, n_mcs, path):
    d = PRETTY_DECIMALS
    width = max([len(s) for s in labels] + [24])
    lines = []
    for lvl in levels:
        lines.append(f"sigma_Y = {lvl:g}% of |element|")
        head = f"{'coefficient':<{width}} {'nominal':>12}"
        if lvl in report.analytical:
            head += f" {'analytical':>16}"
        for n in n_mcs:
            if (lvl, n) in report.mc:
                head += f" {f'MC n={n}':>16}"
        lines.append(head)
        for i, label in enumerate(labels):
            row = f"{label:<{width}} {report.nominal[i]:>12.{d}f}"
            if lvl in report.analytical:
                stds = report.analytical[lvl]
                pct = report.percent_of_nominal(stds)[i]
                row += f" {stds[i]:>9.{d}f} ({pct:4.1f}%)"
            for n in n_mcs:
                if (lvl, n) in report.mc:
                    stds = report.mc[(lvl, n)]
                    pct = report.percent_of_nominal(stds)[i]
                    row += f" {stds[i]:>9.{d}f} ({pct:4.1f}%)"
            lines.append(row)
        lines.append("")
    lines.append("timings (s):")
    for k in sorted(report.timings):
        lines.append(f"  {k}: {report.timings[k]:.3f}")
    path.write_text("\n".join(lines) + "\n")
    return path

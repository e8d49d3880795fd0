"""Command line front end: run scenario tasks, validate setups, sweep nodes.

Every artifact is deterministic.  CSV cells carry full double precision,
JSON keys are sorted, figures render through the Agg backend, and nothing
embeds a timestamp, hostname, or absolute path.  Running the same scenario
twice into two directories must produce byte-identical files; any diff is a
regression, which makes plain ``cmp`` the cheapest integration test around.

Exit codes: 0 on success, 2 for scenario or validation problems (bad input,
failed prerequisite checks, a task that refused to run), anything else is a
bug and raises.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import warnings
from typing import Sequence

import numpy as np

from .assembly import (Assembly, EventRequest, ValidationError,
                       assemble_no_detection, assemble_probability,
                       build_composite, density_grid, kernel_evaluator,
                       validate_assembly)
from .evolution import restricted_propagator
from .field import CtpPoint, translation_covariance_check
from .histories import class_operator_exact_family
from .outputs import write_csv, write_json
from .plots import density_figure, sweep_figure
from .povm import (consistency_offdiagonal, integrated_class_operator,
                   no_detection_operator, povm_density, prob_density,
                   zeno_diagnostic)
from .scenario_io import (RunConfig, ScenarioError, list_bundled,
                          resolve_scenario)
from .smearing import QuadratureRule

DEFAULT_SWEEP_NODES = (8, 16, 32, 64)


def _column_name(prefix: str, outcome) -> str:
    text = "".join(ch if ch.isalnum() else "_" for ch in str(outcome))
    return f"{prefix}_{text}"


def _provenance(cfg: RunConfig) -> dict:
    prov = dict(cfg.scenario.provenance())
    prov["sigma"] = cfg.smearing().sigma
    prov["nodes_time"] = cfg.nodes_time
    prov["nodes_space"] = cfg.nodes_space
    if cfg.seed is not None:
        prov["seed"] = cfg.seed
    return prov


def _time_rule(cfg: RunConfig) -> QuadratureRule:
    return QuadratureRule(nodes=cfg.nodes_time)


def _validated_assembly(cfg: RunConfig, gap: float | None = None):
    asm = cfg.scenario.assembly(gap)
    validate_assembly(asm, cfg.smearing()).raise_on_failure()
    return asm


def _task_density(cfg: RunConfig) -> list[str]:
    """Event density over the proper-time grid, one CSV plus one figure.

    Single detector: one density column per outcome; a gap sweep adds a
    leading gap column and one curve per (gap, outcome).  Two detectors:
    marginal densities plus the joint density on the grid's product, with
    its defect against the product of marginals.
    """
    scenario = cfg.scenario
    if len(scenario.detector_specs) == 1:
        return _density_single(cfg)
    if len(scenario.detector_specs) == 2 and not scenario.gap_sweep:
        return _density_joint(cfg)
    raise ScenarioError("the density task handles one detector (optionally "
                        "gap-swept) or a plain pair of detectors")


def _density_single(cfg: RunConfig) -> list[str]:
    scenario = cfg.scenario
    smearing = cfg.smearing()
    rule = _time_rule(cfg)
    taus = scenario.tau_grid.values()
    gaps = scenario.gap_sweep or (None,)

    rows: list[list] = []
    series: dict[str, np.ndarray] = {}
    outcomes: list | None = None
    for gap in gaps:
        asm = _validated_assembly(cfg, gap)
        grid = density_grid(asm, taus, smearing, rule=rule)
        if outcomes is None:
            outcomes = sorted(grid.values.keys(), key=str)
        for i, tau in enumerate(taus):
            row: list = [] if gap is None else [float(gap)]
            row.append(float(tau))
            row.extend(float(grid.values[mu][i]) for mu in outcomes)
            rows.append(row)
        for mu in outcomes:
            label = str(mu) if gap is None else f"gap={gap:g} {mu}"
            series[label] = grid.values[mu]

    columns = ["tau"] + [_column_name("density", mu) for mu in outcomes]
    if scenario.gap_sweep:
        columns = ["gap"] + columns
    write_csv(os.path.join(cfg.out_dir, "density.csv"), columns, rows,
              provenance=_provenance(cfg))
    density_figure(os.path.join(cfg.out_dir, "density.png"), taus, series,
                   xlabel="proper time", ylabel="event density",
                   title=scenario.name)
    return ["density.csv", "density.png"]


def _density_joint(cfg: RunConfig) -> list[str]:
    """Marginal and joint densities for a detector pair.

    The marginals come from single-coupling assemblies over the shared
    field; the joint density runs both detectors at once, so the defect
    column measures how far the pair is from statistical independence.
    """
    scenario = cfg.scenario
    smearing = cfg.smearing()
    rule = _time_rule(cfg)
    taus = scenario.tau_grid.values()
    asm = _validated_assembly(cfg)

    marginals = []
    series: dict[str, np.ndarray] = {}
    for coupling in asm.couplings:
        single = Assembly(field=asm.field, couplings=(coupling,))
        grid = density_grid(single, taus, smearing, rule=rule)
        marginals.append(grid)
        for mu in sorted(grid.values, key=str):
            series[f"{coupling.detector.name} {mu}"] = grid.values[mu]

    kerns = [kernel_evaluator(c, smearing) for c in asm.couplings]
    mus = [sorted(k.outcomes(), key=str) for k in kerns]
    rows = []
    columns = ["tau_first", "tau_second"]
    for mu1 in mus[0]:
        for mu2 in mus[1]:
            tag = f"{mu1}_{mu2}"
            columns.extend([_column_name("joint", tag),
                            _column_name("product", tag),
                            _column_name("defect", tag)])
    for i, t1 in enumerate(taus):
        for j, t2 in enumerate(taus):
            row = [float(t1), float(t2)]
            for mu1 in mus[0]:
                for mu2 in mus[1]:
                    joint = assemble_probability(
                        asm,
                        [EventRequest(tau=float(t1), outcome=mu1),
                         EventRequest(tau=float(t2), outcome=mu2)],
                        smearing, rule=rule, kernels=kerns)
                    product = float(marginals[0].values[mu1][i]
                                    * marginals[1].values[mu2][j])
                    scale = max(abs(joint), abs(product), 1e-300)
                    row.extend([joint, product,
                                abs(joint - product) / scale])
            rows.append(row)
    write_csv(os.path.join(cfg.out_dir, "density.csv"), columns, rows,
              provenance=_provenance(cfg))
    density_figure(os.path.join(cfg.out_dir, "density.png"), taus, series,
                   xlabel="proper time", ylabel="event density",
                   title=scenario.name)
    return ["density.csv", "density.png"]


def _task_no_detection(cfg: RunConfig) -> list[str]:
    asm = _validated_assembly(cfg)
    summary = assemble_no_detection(asm, cfg.smearing(), rule=_time_rule(cfg))
    payload = {
        "detection_by_outcome": {str(mu): val for mu, val in
                                 summary.detection_by_outcome.items()},
        "total_detection": summary.total_detection,
        "no_detection": summary.no_detection,
        "bounded": summary.bounded,
        "provenance": _provenance(cfg),
    }
    write_json(os.path.join(cfg.out_dir, "no_detection.json"), payload)
    return ["no_detection.json"]


def _task_zeno(cfg: RunConfig) -> list[str]:
    """Normalization of detect / no-event / interference on the composite.

    The detection branch uses the full record projector as the event root,
    so the three reported terms exhaust the unit of probability for a state
    starting in the no-record sector.
    """
    asm = _validated_assembly(cfg)
    comp = build_composite(asm)
    window = cfg.smearing().window
    rule = _time_rule(cfg)
    payload = {"detectors": {}, "provenance": _provenance(cfg)}
    for i, coupling in enumerate(asm.couplings):
        split = comp.record_split(i)
        family = class_operator_exact_family(comp.h_total, split,
                                             comp.record_projectors[i])
        c_plus = integrated_class_operator(family, (0.0, window), rule)
        s_t = restricted_propagator(comp.h_total, split, window)
        report = zeno_diagnostic(c_plus, s_t, comp.rho0, comp.h_total, window)
        payload["detectors"][coupling.detector.name] = dataclasses.asdict(report)
    write_json(os.path.join(cfg.out_dir, "zeno.json"), payload)
    return ["zeno.json"]


def _task_consistency(cfg: RunConfig) -> list[str]:
    """Two-interval additivity defect per outcome on the composite route."""
    asm = _validated_assembly(cfg)
    comp = build_composite(asm)
    window = cfg.smearing().window
    rule = _time_rule(cfg)
    half = 0.5 * window
    entries = {}
    for (i, mu) in sorted(comp.roots.keys(), key=lambda k: (k[0], str(k[1]))):
        fam = comp.exact_family(i, mu)
        rep = consistency_offdiagonal(fam, comp.rho0, (0.0, half),
                                      (half, window), rule)
        name = asm.couplings[i].detector.name
        entries[f"{name}:{mu}"] = dataclasses.asdict(rep)
    payload = {
        "intervals": [[0.0, half], [half, window]],
        "outcomes": entries,
        "provenance": _provenance(cfg),
    }
    write_json(os.path.join(cfg.out_dir, "consistency.json"), payload)
    return ["consistency.json"]


def _task_povm_family(cfg: RunConfig) -> list[str]:
    """Smeared detection operators over the grid plus the completeness check.

    The CSV tabulates, per outcome, the state probability density and the
    element's eigenvalue range; the JSON carries the no-detection operator
    summary, whose negativity is reported rather than clipped.
    """
    scenario = cfg.scenario
    smearing = cfg.smearing()
    asm = _validated_assembly(cfg)
    comp = build_composite(asm)
    rule = _time_rule(cfg)
    taus = scenario.tau_grid.values()

    families = {}
    for (i, mu) in sorted(comp.roots.keys(), key=lambda k: (k[0], str(k[1]))):
        key = str(mu) if asm.n_detectors == 1 else f"{asm.couplings[i].detector.name}_{mu}"
        families[key] = comp.event_family(i, mu)

    rows = []
    worst = {key: {"min_eig": 0.0, "herm_defect": 0.0} for key in families}
    for tau in taus:
        row = [float(tau)]
        for key in sorted(families):
            fam = families[key]
            element = povm_density(fam, float(tau), smearing.sigma, rule,
                                   label=key)
            dens = prob_density(fam, comp.rho0, float(tau), smearing.sigma,
                                rule)
            row.extend([dens, element.min_eig, element.max_eig])
            worst[key]["min_eig"] = min(worst[key]["min_eig"], element.min_eig)
            worst[key]["herm_defect"] = max(worst[key]["herm_defect"],
                                            element.herm_defect)
        rows.append(row)
    columns = ["tau"]
    for key in sorted(families):
        columns.extend([_column_name("density", key),
                        _column_name("min_eig", key),
                        _column_name("max_eig", key)])
    write_csv(os.path.join(cfg.out_dir, "povm_family.csv"), columns, rows,
              provenance=_provenance(cfg))

    def element_family(key):
        fam = families[key]
        return lambda t: povm_density(fam, float(t), smearing.sigma, rule,
                                      label=key)

    ndo = no_detection_operator({k: element_family(k) for k in families},
                                smearing.window, rule)
    payload = {
        "no_detection_min_eig": ndo.min_eig,
        "no_detection_max_eig": ndo.max_eig,
        "completeness_residual": ndo.completeness_residual,
        "element_extrema": worst,
        "provenance": _provenance(cfg),
    }
    write_json(os.path.join(cfg.out_dir, "povm_family.json"), payload)
    return ["povm_family.csv", "povm_family.json"]


def _task_covariance(cfg: RunConfig) -> list[str]:
    """Translation checks: field correlators and the assembled density.

    Field level: one time shift and, when the lattice data exists, one
    exact lattice-step space shift at tight tolerance.  Assembly level: the
    density at two interior grid times must agree for a stationary kernel
    and an energy-invariant field state; otherwise the comparison is
    reported as inapplicable rather than failed.
    """
    scenario = cfg.scenario
    smearing = cfg.smearing()
    field = scenario.field()
    fam = sorted(field.composites.keys())[0]
    labels = field.labels(fam)
    x0 = labels[0]
    x1 = labels[min(1, len(labels) - 1)]
    sigma = smearing.sigma
    forward = [CtpPoint(fam, (0.375 * sigma,) + x0)]
    backward = [CtpPoint(fam, (-0.25 * sigma,) + x1)]

    field_checks = [translation_covariance_check(
        field, (0.5 * sigma, 0.0, 0.0, 0.0), forward, backward, tol=1e-8)]
    if field.lattice_spacing and field.momentum is not None:
        field_checks.append(translation_covariance_check(
            field, (0.0, field.lattice_spacing, 0.0, 0.0), forward, backward,
            tol=1e-10))

    asm = _validated_assembly(cfg)
    rule = _time_rule(cfg)
    grid = scenario.tau_grid
    t_first = grid.lo + 0.45 * (grid.hi - grid.lo)
    t_second = grid.lo + 0.55 * (grid.hi - grid.lo)
    dens = density_grid(asm, [t_first, t_second], smearing, rule=rule)
    h = field.h_phi
    comm = float(np.abs(h @ field.rho0 - field.rho0 @ h).max())
    state_invariant = comm <= 1e-10 * max(float(np.abs(h).max()), 1.0)
    applicable = bool(dens.provenance["stationary_kernel"] and state_invariant)
    density_shift = {}
    for mu in sorted(dens.values, key=str):
        v0 = float(dens.values[mu][0])
        v1 = float(dens.values[mu][1])
        dev = abs(v0 - v1) / max(abs(v0), abs(v1), 1e-300)
        density_shift[str(mu)] = {
            "tau_first": t_first,
            "tau_second": t_second,
            "value_first": v0,
            "value_second": v1,
            "relative_deviation": dev,
            "applicable": applicable,
            "passed": bool(not applicable or dev <= 1e-8),
        }
    payload = {
        "field_checks": [dataclasses.asdict(r) for r in field_checks],
        "density_time_shift": density_shift,
        "provenance": _provenance(cfg),
    }
    write_json(os.path.join(cfg.out_dir, "covariance.json"), payload)
    return ["covariance.json"]


def _task_convergence(cfg: RunConfig,
                      node_list: Sequence[int] | None = None) -> list[str]:
    """Density at the grid midpoint for a ladder of quadrature sizes.

    Neighbor differences estimate the quadrature error; the last rung has
    no neighbor and reports nan.  The figure drops non-finite estimates.
    """
    node_list = tuple(sorted(set(int(n) for n in
                                 (node_list or DEFAULT_SWEEP_NODES))))
    if len(node_list) < 2:
        raise ScenarioError("node sweep needs at least two distinct sizes")
    scenario = cfg.scenario
    smearing = cfg.smearing()
    asm = _validated_assembly(cfg)
    grid = scenario.tau_grid
    tau_ref = 0.5 * (grid.lo + grid.hi)

    kerns = [kernel_evaluator(c, smearing) for c in asm.couplings]
    events = [EventRequest(tau=tau_ref, outcome=sorted(k.outcomes(), key=str)[0])
              for k in kerns]
    values = [assemble_probability(asm, events, smearing,
                                   rule=QuadratureRule(nodes=n), kernels=kerns)
              for n in node_list]
    errors = [abs(values[i] - values[i + 1]) for i in range(len(values) - 1)]
    errors.append(float("nan"))

    prov = _provenance(cfg)
    prov["tau_reference"] = tau_ref
    outcome_tag = ",".join(str(ev.outcome) for ev in events)
    prov["outcomes"] = outcome_tag
    rows = [[n, v, e] for n, v, e in zip(node_list, values, errors)]
    write_csv(os.path.join(cfg.out_dir, "convergence.csv"),
              ["nodes", "value", "error_vs_next"], rows, provenance=prov)
    sweep_figure(os.path.join(cfg.out_dir, "convergence.png"),
                 node_list[:-1], {outcome_tag: errors[:-1]},
                 title=scenario.name)
    return ["convergence.csv", "convergence.png"]


_TASK_FNS = {
    "density": _task_density,
    "no_detection": _task_no_detection,
    "zeno": _task_zeno,
    "consistency": _task_consistency,
    "povm_family": _task_povm_family,
    "covariance_check": _task_covariance,
    "convergence_sweep": _task_convergence,
}


def _run(cfg: RunConfig, sweep_nodes: Sequence[int] | None = None) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    report = {
        "scenario": cfg.scenario.name,
        "scenario_hash": cfg.scenario.content_hash,
        "provenance": _provenance(cfg),
        "tasks": {},
        "warnings": [],
    }
    failed = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for task in cfg.tasks:
            try:
                if task == "convergence_sweep":
                    outputs = _task_convergence(cfg, sweep_nodes)
                else:
                    outputs = _TASK_FNS[task](cfg)
                report["tasks"][task] = {"status": "ok", "outputs": outputs}
            except (ScenarioError, ValidationError, ValueError,
                    ArithmeticError) as exc:
                failed = True
                report["tasks"][task] = {"status": "error", "error": str(exc)}
    report["warnings"] = sorted({f"{w.category.__name__}: {w.message}"
                                 for w in caught})
    write_json(os.path.join(cfg.out_dir, "report.json"), report)
    for task in cfg.tasks:
        entry = report["tasks"][task]
        if entry["status"] == "ok":
            print(f"{task}: ok ({', '.join(entry['outputs'])})")
        else:
            print(f"{task}: error: {entry['error']}")
    print(f"report: {os.path.join(cfg.out_dir, 'report.json')}")
    return 2 if failed else 0


def _validate(args) -> int:
    scenario = resolve_scenario(args.scenario)
    result = validate_assembly(scenario.assembly(), scenario.smearing)
    for check in result.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}: {check.detail}")
    if args.json:
        payload = {
            "scenario": scenario.name,
            "scenario_hash": scenario.content_hash,
            "passed": result.passed,
            "checks": [dataclasses.asdict(c) for c in result.checks],
        }
        write_json(args.json, payload)
    return 0 if result.passed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmeas",
        description="Measurement-event densities for truncated field models: "
                    "run scenarios, validate their prerequisites, sweep "
                    "quadrature sizes.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run scenario tasks into an output "
                                     "directory (CSV, JSON, PNG)")
    run.add_argument("scenario", help="scenario file path, or a bundled name")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--tasks", default=None,
                     help="comma-separated task subset overriding the "
                          "scenario's run.tasks")
    run.add_argument("--nodes-time", type=int, default=None,
                     help="override the time-quadrature node count")
    run.add_argument("--nodes-space", type=int, default=None,
                     help="override the space-quadrature node count")
    run.add_argument("--sigma", type=float, default=None,
                     help="override the temporal resolution sigma")

    val = sub.add_parser("validate",
                         help="run prerequisite checks and print one "
                              "PASS/FAIL line per check")
    val.add_argument("scenario", help="scenario file path, or a bundled name")
    val.add_argument("--json", default=None,
                     help="also write the checks to this JSON file")

    sweep = sub.add_parser("sweep",
                           help="density at the grid midpoint for a ladder "
                                "of quadrature sizes")
    sweep.add_argument("scenario", help="scenario file path, or a bundled name")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--nodes", default=None,
                       help="comma-separated node counts "
                            "(default 8,16,32,64)")

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            for name in list_bundled():
                print(name)
            return 0
        if args.command == "validate":
            return _validate(args)
        scenario = resolve_scenario(args.scenario)
        if args.command == "sweep":
            nodes = None
            if args.nodes:
                nodes = [int(v) for v in str(args.nodes).split(",") if v.strip()]
            cfg = RunConfig(scenario=scenario, out_dir=args.out,
                            tasks=("convergence_sweep",),
                            nodes_time=scenario.nodes_time,
                            nodes_space=scenario.nodes_space,
                            seed=scenario.seed)
            return _run(cfg, sweep_nodes=nodes)
        tasks = scenario.tasks
        if args.tasks:
            tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
        cfg = RunConfig(scenario=scenario, out_dir=args.out, tasks=tasks,
                        nodes_time=args.nodes_time or scenario.nodes_time,
                        nodes_space=args.nodes_space or scenario.nodes_space,
                        sigma=args.sigma, seed=scenario.seed)
        return _run(cfg)
    except (ScenarioError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

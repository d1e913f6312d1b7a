"""Command-line surface: optimize, sweep, simulate, fieldmap.

Every number written to disk comes from a library call; the CLI only routes
data. Artifacts land under ``<out>/<scenario-hash>/`` and re-running with the
same scenario and seed reproduces them byte for byte (timing fields aside).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import optimize, oracle, power, rectenna
from .channel import build_channel
from .scenario import (Architecture, ScenarioConfig, ScenarioError,
                       ScenarioParseError, ScenarioValidationError,
                       load_scenario)
from .transmitter import DmaState, Waveform, effective_rows

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_INFEASIBLE = 4
EXIT_ITER_LIMIT = 5


def _complex_to_pairs(a: np.ndarray) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(a).reshape(-1)]


def _pairs_to_complex(pairs, shape) -> np.ndarray:
    arr = np.array([complex(re, im) for re, im in pairs])
    return arr.reshape(shape)


@dataclass
class RunArtifact:
    """Everything needed to reproduce and re-verify one optimization run."""

    scenario_hash: str
    scenario: dict
    architecture: str
    waveform: np.ndarray                 # [n_rf, n_f] complex
    dma_q: np.ndarray | None             # [n_v, n_h] complex
    dma_phi: np.ndarray | None
    power_report: power.PowerReport
    trace_rows: list[dict]
    p_dc: np.ndarray
    converged: bool

    def content_hash(self) -> str:
        blob = json.dumps(self._payload(with_hash=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def _payload(self, with_hash=True) -> dict:
        payload = {
            "scenario_hash": self.scenario_hash,
            "scenario": self.scenario,
            "architecture": self.architecture,
            "waveform": {"shape": list(self.waveform.shape),
                         "values": _complex_to_pairs(self.waveform)},
            "dma": None,
            "power_report": self.power_report.to_dict(),
            "trace": [{k: v for k, v in row.items()
                       if not k.endswith("_seconds")} for row in self.trace_rows],
            "p_dc": list(map(float, self.p_dc)),
            "converged": self.converged,
        }
        if self.dma_q is not None:
            payload["dma"] = {"shape": list(self.dma_q.shape),
                              "q": _complex_to_pairs(self.dma_q),
                              "phi": list(map(float, self.dma_phi.reshape(-1)))}
        if with_hash:
            payload["content_hash"] = self.content_hash()
            payload["timings"] = [{k: row[k] for k in row if k.endswith("_seconds")}
                                  for row in self.trace_rows]
        return payload

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self._payload(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunArtifact":
        with open(path) as fh:
            data = json.load(fh)
        wshape = tuple(data["waveform"]["shape"])
        dma_q = dma_phi = None
        if data.get("dma"):
            qshape = tuple(data["dma"]["shape"])
            dma_q = _pairs_to_complex(data["dma"]["q"], qshape)
            dma_phi = np.array(data["dma"]["phi"]).reshape(qshape)
        return cls(
            scenario_hash=data["scenario_hash"],
            scenario=data["scenario"],
            architecture=data["architecture"],
            waveform=_pairs_to_complex(data["waveform"]["values"], wshape),
            dma_q=dma_q,
            dma_phi=dma_phi,
            power_report=power.PowerReport(**data["power_report"]),
            trace_rows=data["trace"],
            p_dc=np.array(data["p_dc"]),
            converged=data["converged"],
        )


def _rebuild_state(scenario: ScenarioConfig, artifact: RunArtifact):
    waveform = Waveform(artifact.waveform)
    dma = None
    if artifact.dma_q is not None:
        dma = DmaState.from_phases(np.zeros_like(artifact.dma_phi),
                                   scenario.array.inter_element_dx,
                                   scenario.microstrip).with_weights(artifact.dma_q)
    return waveform, dma


def run_optimization(scenario: ScenarioConfig,
                     paper_sampling: bool = False) -> RunArtifact:
    """Optimize one scenario and assemble the full artifact."""
    if scenario.array.architecture is Architecture.DMA:
        waveform, dma, trace = optimize.run_asca_dma(scenario)
        dma_q, dma_phi = dma.q, dma.phi
    else:
        waveform, trace = optimize.run_sca_fd(scenario)
        dma = None
        dma_q = dma_phi = None
    dev = scenario.device
    report = power.sampled_consumption(
        waveform, dma, scenario.array, scenario.frequency, dev.hpa_gain,
        dev.hpa_saturation_power, dev.hpa_max_efficiency,
        paper_sampling=paper_sampling)
    return RunArtifact(
        scenario_hash=scenario.content_hash(),
        scenario=scenario.to_dict(),
        architecture=scenario.array.architecture.value,
        waveform=waveform.omega,
        dma_q=dma_q, dma_phi=dma_phi,
        power_report=report,
        trace_rows=[dataclasses.asdict(r) for r in
                    (trace.records if trace.records else [])],
        p_dc=trace.final_p_dc,
        converged=trace.converged,
    )


def _load_with_overrides(args) -> ScenarioConfig:
    scenario = load_scenario(args.scenario)
    if getattr(args, "arch", None):
        data = scenario.to_dict()
        data["array"]["architecture"] = args.arch
        from .scenario import _scenario_from_dict
        scenario = _scenario_from_dict(data)
    if getattr(args, "seed", None) is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    return scenario


def cmd_optimize(args) -> int:
    scenario = _load_with_overrides(args)
    artifact = run_optimization(scenario, paper_sampling=args.paper_sampling)
    out = Path(args.out) / artifact.scenario_hash[:12]
    out.mkdir(parents=True, exist_ok=True)
    artifact.save(out / "artifact.json")
    rows = artifact.trace_rows
    with open(out / "trace.csv", "w") as fh:
        if rows:
            fh.write(",".join(rows[0].keys()) + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row.values()) + "\n")
    print(f"artifact: {out / 'artifact.json'}")
    print(f"p_c_sampled: {artifact.power_report.p_c_sampled:.6e} W")
    print(f"p_dc: {' '.join(f'{p:.3e}' for p in artifact.p_dc)} W")
    if not artifact.converged:
        print("warning: outer loop hit the iteration cap", file=sys.stderr)
        return EXIT_ITER_LIMIT
    return EXIT_OK


_SWEEP_AXES = ("L", "n_f", "M", "d", "P_max")


def _scenario_for_point(base: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    data = base.to_dict()
    if axis == "L":
        data["array"]["length"] = float(value)
    elif axis == "n_f":
        bandwidth = base.frequency.delta_f * base.frequency.n_f
        data["frequency"]["n_tones"] = int(value)
        data["frequency"].pop("delta_f", None)
        data["frequency"]["bandwidth"] = bandwidth
    elif axis == "M":
        m = int(value)
        if m > len(data["receivers"]):
            raise ScenarioValidationError("sweep M exceeds configured receivers")
        data["receivers"] = data["receivers"][:m]
    elif axis == "d":
        for rec in data["receivers"]:
            pos = np.asarray(rec["position"], dtype=float)
            norm = np.linalg.norm(pos)
            if norm == 0:
                raise ScenarioValidationError("cannot rescale a receiver at the origin")
            rec["position"] = list(pos / norm * float(value))
    elif axis == "P_max":
        data["device"]["hpa_saturation_power"] = float(value)
    else:
        raise ScenarioValidationError(f"unknown sweep axis {axis!r}")
    from .scenario import _scenario_from_dict
    return _scenario_from_dict(data)


def _sweep_point(payload):
    base_dict, axis, value = payload
    from .scenario import _scenario_from_dict
    base = _scenario_from_dict(base_dict)
    try:
        scenario = _scenario_for_point(base, axis, value)
        artifact = run_optimization(scenario)
        return {"value": value, "status": "ok",
                "p_c_bound": artifact.trace_rows[-1]["p_c_bound"],
                "p_c_sampled": artifact.power_report.p_c_sampled,
                "outer_iters": len(artifact.trace_rows),
                "feasible": bool(np.all(
                    artifact.p_dc >= 0.999 * np.array(
                        [r["eh_requirement"] for r in scenario.to_dict()["receivers"]])))}
    except Exception as exc:  # per-point failures recorded, sweep continues
        return {"value": value, "status": f"error: {exc}", "p_c_bound": math.nan,
                "p_c_sampled": math.nan, "outer_iters": 0, "feasible": False}


def cmd_sweep(args) -> int:
    scenario = _load_with_overrides(args)
    values = [float(v) for v in args.values]
    payloads = [(scenario.to_dict(), args.axis, v) for v in values]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.axis}.csv"
    fields = ["value", "p_c_bound", "p_c_sampled", "outer_iters", "feasible", "status"]
    with open(path, "w") as fh:
        fh.write(",".join(fields) + "\n")
        for row in results:
            fh.write(",".join(str(row[k]) for k in fields) + "\n")
    print(f"sweep table: {path}")
    return EXIT_OK if all(r["status"] == "ok" for r in results) else EXIT_ERROR


def cmd_simulate(args) -> int:
    """Re-derive the artifact's claims through the time-domain oracle."""
    artifact = RunArtifact.load(args.artifact)
    from .scenario import _scenario_from_dict
    scenario = _scenario_from_dict(artifact.scenario)
    waveform, dma = _rebuild_state(scenario, artifact)
    dev = scenario.device
    channel = build_channel(scenario.array, scenario.receivers,
                            scenario.frequency, dev.boresight_gain)
    eff = effective_rows(channel, scenario.array, dma)
    checks: list[tuple[str, bool, str]] = []

    worst = 0.0
    p_dc_re = np.zeros(scenario.n_receivers)
    for m in range(scenario.n_receivers):
        s = rectenna.tone_amplitudes(eff.chain[m], waveform.omega.T)
        m2 = rectenna.moment2_from_spectrum(s, dev.hpa_gain)
        m4 = rectenna.moment4_from_spectrum(s, dev.hpa_gain)
        sig = oracle.synthesize_received(scenario, waveform, dma, m, channel=channel)
        t2, t4 = sig.moment(2), sig.moment(4)
        rel = max(abs(t2 - m2) / max(m2, 1e-300), abs(t4 - m4) / max(m4, 1e-300))
        worst = max(worst, rel)
        v = rectenna.output_voltage(m2, m4, dev.k2, dev.k4)
        p_dc_re[m] = rectenna.dc_power(v, dev.rect_load_resistance)
    checks.append(("moment-equivalence", worst <= 1e-8, f"max rel err {worst:.2e}"))
    dc_rel = float(np.max(np.abs(p_dc_re - artifact.p_dc)
                          / np.maximum(artifact.p_dc, 1e-300)))
    checks.append(("p-dc-matches-artifact", dc_rel <= 1e-6, f"max rel err {dc_rel:.2e}"))
    feas = bool(np.all(p_dc_re >= 0.999 * scenario.eh_targets))
    checks.append(("eh-targets-met", feas,
                   f"min margin {np.min(p_dc_re / scenario.eh_targets):.4f}"))
    report = power.sampled_consumption(waveform, dma, scenario.array,
                                       scenario.frequency, dev.hpa_gain,
                                       dev.hpa_saturation_power,
                                       dev.hpa_max_efficiency)
    jensen = report.p_hpa_sampled <= report.p_hpa_bound + 1e-9 * max(1.0, report.p_hpa_bound)
    checks.append(("amplifier-bound-holds", jensen,
                   f"sampled {report.p_hpa_sampled:.6e} <= bound {report.p_hpa_bound:.6e}"))
    pc_rel = abs(report.p_c_sampled - artifact.power_report.p_c_sampled) \
        / max(artifact.power_report.p_c_sampled, 1e-300)
    checks.append(("p-c-matches-artifact", pc_rel <= 1e-6, f"rel err {pc_rel:.2e}"))
    if dma is not None:
        disk_ok = bool(np.all(dma.circle_distance() <= 1e-9))
        checks.append(("lorentzian-disks-feasible", disk_ok,
                       f"max excess {np.max(dma.circle_distance()):.2e}"))

    all_ok = True
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok &= ok
    return EXIT_OK if all_ok else EXIT_ERROR


def cmd_fieldmap(args) -> int:
    artifact = RunArtifact.load(args.artifact)
    from .scenario import _scenario_from_dict
    scenario = _scenario_from_dict(artifact.scenario)
    waveform, dma = _rebuild_state(scenario, artifact)
    plane = oracle.PlaneSpec(x_min=args.xmin, x_max=args.xmax,
                             z_min=args.zmin, z_max=args.zmax,
                             resolution=args.res, y_offset=args.y)
    fmap = oracle.field_map(scenario, waveform, dma, plane)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fmap.to_csv(out / "fieldmap.csv")
    meta = {"plane": dataclasses.asdict(plane),
            "argmax": fmap.argmax_position(),
            "scenario_hash": artifact.scenario_hash}
    with open(out / "fieldmap.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"fieldmap: {out / 'fieldmap.csv'} argmax={fmap.argmax_position()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wptopt",
        description="Minimum-power waveform and beam-focusing design for "
                    "near-field wireless power transfer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="optimize one scenario")
    p_opt.add_argument("scenario")
    p_opt.add_argument("--arch", choices=["fd", "dma"], help="override architecture")
    p_opt.add_argument("--paper-sampling", action="store_true",
                       help="sample consumption over 1 ms at twice the top tone")
    p_opt.add_argument("--seed", type=int, default=None)
    p_opt.add_argument("--out", default="runs")
    p_opt.set_defaults(func=cmd_optimize)

    p_sw = sub.add_parser("sweep", help="optimize across one swept axis")
    p_sw.add_argument("scenario")
    p_sw.add_argument("--axis", choices=_SWEEP_AXES, required=True)
    p_sw.add_argument("--values", nargs="+", required=True)
    p_sw.add_argument("--arch", choices=["fd", "dma"])
    p_sw.add_argument("--seed", type=int, default=None)
    p_sw.add_argument("--jobs", type=int, default=1)
    p_sw.add_argument("--out", default="runs")
    p_sw.set_defaults(func=cmd_sweep)

    p_sim = sub.add_parser("simulate", help="re-verify an artifact with the oracle")
    p_sim.add_argument("artifact")
    p_sim.set_defaults(func=cmd_simulate)

    p_fm = sub.add_parser("fieldmap", help="spatial power map for an artifact")
    p_fm.add_argument("artifact")
    p_fm.add_argument("--xmin", type=float, default=-1.5)
    p_fm.add_argument("--xmax", type=float, default=1.5)
    p_fm.add_argument("--zmin", type=float, default=0.25)
    p_fm.add_argument("--zmax", type=float, default=4.0)
    p_fm.add_argument("--res", type=float, default=0.05)
    p_fm.add_argument("--y", type=float, default=0.0)
    p_fm.add_argument("--out", default="runs")
    p_fm.set_defaults(func=cmd_fieldmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ScenarioValidationError, ScenarioError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except optimize.UnmeetableRequirementError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except optimize.OptimizationError as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return EXIT_ITER_LIMIT
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())

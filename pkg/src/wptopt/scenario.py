"""Problem configuration: array geometry, tone plan, receivers, device parameters.

A scenario is loaded from a sectioned key/value text file (or its JSON export),
validated once, and then treated as immutable. All derived quantities (tone
frequencies, element positions, rectifier Taylor coefficients) are populated at
construction time so downstream code never re-derives them.
"""

from __future__ import annotations

import configparser
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioError(ValueError):
    """Base class for scenario loading/validation failures."""


class ScenarioParseError(ScenarioError):
    """Malformed scenario file (syntax, missing keys, unparseable values)."""


class ScenarioValidationError(ScenarioError):
    """Structurally valid file whose values violate a documented invariant."""


class Architecture(enum.Enum):
    FULLY_DIGITAL = "fd"
    DMA = "dma"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ArraySpec:
    """Uniform planar array centered at the origin in the z=0 plane.

    Boresight points along +z. For the fully-digital architecture every
    element has a dedicated RF chain; for the DMA architecture each row is one
    microstrip fed by a single RF chain.
    """

    architecture: Architecture
    antenna_length: float          # side of the nominal square aperture [m]
    n_v: int                       # rows (DMA: number of microstrips)
    n_h: int                       # elements per row
    inter_element_dx: float        # spacing along a row [m]
    inter_row_dy: float            # spacing between rows [m]
    element_positions: np.ndarray = field(repr=False)  # [n_v, n_h, 3]

    @property
    def n_elements(self) -> int:
        return self.n_v * self.n_h

    @property
    def rf_chain_count(self) -> int:
        if self.architecture is Architecture.FULLY_DIGITAL:
            return self.n_elements
        return self.n_v

    @property
    def aperture_diagonal(self) -> float:
        return math.sqrt(2.0) * self.antenna_length

    def validate(self):
        if self.n_v < 1 or self.n_h < 1:
            raise ScenarioValidationError("array must contain at least one element")
        pos = self.element_positions
        if pos.shape != (self.n_v, self.n_h, 3):
            raise ScenarioValidationError("element_positions shape mismatch")
        if np.any(pos[..., 2] != 0.0):
            raise ScenarioValidationError("all element positions must lie in the z=0 plane")
        ext_x = (self.n_h - 1) * self.inter_element_dx
        ext_y = (self.n_v - 1) * self.inter_row_dy
        if ext_x > self.antenna_length * (1 + 1e-9) or ext_y > self.antenna_length * (1 + 1e-9):
            raise ScenarioValidationError("element grid exceeds the nominal aperture side")


def build_array(architecture: Architecture, length: float, f1: float) -> ArraySpec:
    """Dimension and place the array elements for the given aperture side.

    Fully digital: ``n_v = n_h = floor(2L/lambda1)`` with half-wavelength
    spacing on both axes. DMA: ``n_v = floor(2L/lambda1)`` microstrips spaced
    half a wavelength apart, each carrying ``n_h = floor(5L/lambda1)`` elements
    spaced a fifth of a wavelength apart.
    """
    if length <= 0:
        raise ScenarioValidationError("array length must be positive")
    if f1 <= 0:
        raise ScenarioValidationError("operating frequency must be positive")
    lam1 = SPEED_OF_LIGHT / f1
    n_v = int(math.floor(2.0 * length / lam1))
    if architecture is Architecture.FULLY_DIGITAL:
        n_h = n_v
        dx = dy = lam1 / 2.0
    else:
        n_h = int(math.floor(5.0 * length / lam1))
        dx = lam1 / 5.0
        dy = lam1 / 2.0
    if n_v < 1 or n_h < 1:
        raise ScenarioValidationError(
            f"length {length} m is too small to fit one element at f1={f1} Hz")
    xs = (np.arange(n_h) - (n_h - 1) / 2.0) * dx
    ys = (np.arange(n_v) - (n_v - 1) / 2.0) * dy
    pos = np.zeros((n_v, n_h, 3))
    pos[..., 0] = xs[None, :]
    pos[..., 1] = ys[:, None]
    spec = ArraySpec(architecture, float(length), n_v, n_h, dx, dy, _readonly(pos))
    spec.validate()
    return spec


@dataclass(frozen=True)
class FrequencyPlan:
    """Equally spaced multi-tone plan: ``f_n = f1 + (n-1) * delta_f``."""

    f1: float
    n_f: int
    delta_f: float

    @classmethod
    def from_bandwidth(cls, f1: float, bandwidth: float, n_f: int) -> "FrequencyPlan":
        if n_f == 1:
            return cls(f1, 1, bandwidth)  # spacing is irrelevant for one tone
        return cls(f1, n_f, bandwidth / n_f)

    @property
    def tones(self) -> np.ndarray:
        return self.f1 + np.arange(self.n_f) * self.delta_f

    @property
    def wavelengths(self) -> np.ndarray:
        return SPEED_OF_LIGHT / self.tones

    @property
    def f_max(self) -> float:
        return self.f1 + (self.n_f - 1) * self.delta_f

    def validate(self):
        if self.f1 <= 0:
            raise ScenarioValidationError("f1 must be positive")
        if self.n_f < 1:
            raise ScenarioValidationError("tone count must be >= 1")
        if self.delta_f <= 0:
            raise ScenarioValidationError("tones must be strictly increasing (delta_f > 0)")

    # -- periodic time base ------------------------------------------------
    def cycle_ratio(self) -> Fraction:
        """f1/delta_f as an exact small fraction; the composite multi-tone
        signal is periodic only when this ratio is rational."""
        ratio = self.f1 / self.delta_f
        frac = Fraction(ratio).limit_denominator(10_000)
        if abs(float(frac) - ratio) > 1e-9 * max(1.0, ratio):
            raise ScenarioValidationError(
                "f1/delta_f is not a small rational: composite signal is not periodic")
        return frac

    def fundamental_period(self) -> float:
        return self.cycle_ratio().denominator / self.delta_f

    def quadrature_times(self, degree: int) -> np.ndarray:
        """Uniform samples over one fundamental period whose discrete mean is
        exact for any trigonometric polynomial of the tones up to ``degree``.

        Every frequency in ``y(t)**degree`` is an integer multiple of
        ``delta_f/q``; with more samples per period than the largest multiple,
        no component aliases onto DC.
        """
        frac = self.cycle_ratio()
        p, q = frac.numerator, frac.denominator
        k = degree * (p + (self.n_f - 1) * q) + 1
        if k > 20_000_000:
            raise ScenarioValidationError("periodic sampling grid too large")
        period = q / self.delta_f
        return np.arange(k) * (period / k)

    def nyquist_times(self, duration: float) -> np.ndarray:
        """Samples at exactly twice the highest tone over ``duration``."""
        rate = 2.0 * self.f_max
        k = int(round(duration * rate))
        if k > 50_000_000:
            raise ScenarioValidationError("sampling grid too large")
        return np.arange(k) / rate


@dataclass(frozen=True)
class ReceiverSpec:
    """An energy-harvesting device: position and required DC power."""

    position: np.ndarray   # [3] meters
    eh_requirement: float  # watts

    def validate(self, array: ArraySpec | None = None):
        if np.asarray(self.position).shape != (3,):
            raise ScenarioValidationError("receiver position must be a 3-vector")
        if self.eh_requirement <= 0:
            raise ScenarioValidationError("EH requirement must be positive")
        if array is not None:
            d = np.linalg.norm(array.element_positions - np.asarray(self.position), axis=-1)
            if np.min(d) <= 0.0:
                raise ScenarioValidationError("receiver coincides with an array element")


@dataclass(frozen=True)
class DeviceParams:
    """HPA and rectifier characteristics shared by transmitter and receivers.

    ``k2`` and ``k4`` are the fourth-order Taylor coefficients of the rectifier
    output voltage, derived from the antenna resistance, diode ideality and
    thermal voltage.
    """

    hpa_gain: float = 1.0
    hpa_max_efficiency: float = math.pi / 4.0
    hpa_saturation_power: float = 1.0      # watts
    rect_antenna_resistance: float = 50.0  # ohms
    rect_load_resistance: float = 50.0     # ohms
    rect_thermal_voltage: float = 25e-3    # volts
    rect_ideality: float = 1.05
    boresight_gain: float = 0.0

    @property
    def k2(self) -> float:
        vt = self.rect_ideality * self.rect_thermal_voltage
        return self.rect_antenna_resistance / (2.0 * vt)

    @property
    def k4(self) -> float:
        vt = self.rect_ideality * self.rect_thermal_voltage
        return self.rect_antenna_resistance ** 2 / (24.0 * vt ** 3)

    def validate(self):
        for name in ("hpa_gain", "hpa_max_efficiency", "hpa_saturation_power",
                     "rect_antenna_resistance", "rect_load_resistance",
                     "rect_thermal_voltage", "rect_ideality"):
            if getattr(self, name) <= 0:
                raise ScenarioValidationError(f"{name} must be positive")
        if self.hpa_max_efficiency > 1.0:
            raise ScenarioValidationError("hpa_max_efficiency must lie in (0, 1]")
        if self.boresight_gain < 0:
            raise ScenarioValidationError("boresight_gain must be >= 0")


@dataclass(frozen=True)
class MicrostripParams:
    """Waveguide propagation constants for the DMA feed lines."""

    attenuation: float = 0.356    # alpha [1/m]
    propagation: float = 202.19   # beta [1/m]

    def validate(self):
        if self.attenuation < 0:
            raise ScenarioValidationError("microstrip attenuation must be >= 0")
        if self.propagation <= 0:
            raise ScenarioValidationError("microstrip propagation constant must be positive")


@dataclass(frozen=True)
class SolverSettings:
    sca_rel_tol: float = 1e-6          # upsilon: relative SCA/outer stop
    init_seed_amplitude: float = 1e-3  # tau_s: amplitude ramp seed
    init_ramp_factor: float = 5.0      # varsigma: amplitude ramp multiplier
    max_outer_iters: int = 50
    max_sca_iters: int = 60
    cone_solver_kkt_tol: float = 1e-9
    finite_diff_step: float = 1e-6

    def validate(self):
        for name in ("sca_rel_tol", "init_seed_amplitude", "cone_solver_kkt_tol",
                     "finite_diff_step"):
            if getattr(self, name) <= 0:
                raise ScenarioValidationError(f"{name} must be positive")
        if self.init_ramp_factor <= 1.0:
            raise ScenarioValidationError("init_ramp_factor must exceed 1")
        if self.max_outer_iters < 1 or self.max_sca_iters < 1:
            raise ScenarioValidationError("iteration caps must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully validated problem instance; safe to share across workers."""

    array: ArraySpec
    frequency: FrequencyPlan
    receivers: tuple[ReceiverSpec, ...]
    device: DeviceParams = DeviceParams()
    microstrip: MicrostripParams = MicrostripParams()
    solver: SolverSettings = SolverSettings()
    seed: int = 0

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def receiver_positions(self) -> np.ndarray:
        return np.array([r.position for r in self.receivers], dtype=float)

    @property
    def eh_targets(self) -> np.ndarray:
        return np.array([r.eh_requirement for r in self.receivers], dtype=float)

    def voltage_targets(self) -> np.ndarray:
        """Per-receiver rectifier output voltage needed: sqrt(R_L * Pbar)."""
        return np.sqrt(self.device.rect_load_resistance * self.eh_targets)

    def validate(self):
        self.array.validate()
        self.frequency.validate()
        self.device.validate()
        self.microstrip.validate()
        self.solver.validate()
        if not self.receivers:
            raise ScenarioValidationError("at least one receiver is required")
        for r in self.receivers:
            r.validate(self.array)
        if self.array.rf_chain_count < self.n_receivers:
            raise ScenarioValidationError(
                "RF chain count must be >= number of receivers")

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "array": {
                "architecture": self.array.architecture.value,
                "length": self.array.antenna_length,
                "n_v": self.array.n_v,
                "n_h": self.array.n_h,
                "inter_element_dx": self.array.inter_element_dx,
                "inter_row_dy": self.array.inter_row_dy,
            },
            "frequency": {
                "f1": self.frequency.f1,
                "n_tones": self.frequency.n_f,
                "delta_f": self.frequency.delta_f,
            },
            "receivers": [
                {"position": list(map(float, r.position)), "eh_requirement": r.eh_requirement}
                for r in self.receivers
            ],
            "device": {
                "hpa_gain": self.device.hpa_gain,
                "hpa_max_efficiency": self.device.hpa_max_efficiency,
                "hpa_saturation_power": self.device.hpa_saturation_power,
                "rect_antenna_resistance": self.device.rect_antenna_resistance,
                "rect_load_resistance": self.device.rect_load_resistance,
                "rect_thermal_voltage": self.device.rect_thermal_voltage,
                "rect_ideality": self.device.rect_ideality,
                "boresight_gain": self.device.boresight_gain,
            },
            "microstrip": {
                "attenuation": self.microstrip.attenuation,
                "propagation": self.microstrip.propagation,
            },
            "solver": {
                "sca_rel_tol": self.solver.sca_rel_tol,
                "init_seed_amplitude": self.solver.init_seed_amplitude,
                "init_ramp_factor": self.solver.init_ramp_factor,
                "max_outer_iters": self.solver.max_outer_iters,
                "max_sca_iters": self.solver.max_sca_iters,
                "cone_solver_kkt_tol": self.solver.cone_solver_kkt_tol,
                "finite_diff_step": self.solver.finite_diff_step,
            },
            "seed": self.seed,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_solver(self, **kwargs) -> "ScenarioConfig":
        return replace(self, solver=replace(self.solver, **kwargs))


def _scenario_from_dict(data: dict) -> ScenarioConfig:
    try:
        arr = data["array"]
        arch = Architecture(arr["architecture"])
        freq = data["frequency"]
        f1 = float(freq["f1"])
        n_f = int(freq["n_tones"])
        if "delta_f" in freq:
            plan = FrequencyPlan(f1, n_f, float(freq["delta_f"]))
        else:
            plan = FrequencyPlan.from_bandwidth(f1, float(freq["bandwidth"]), n_f)
        array = build_array(arch, float(arr["length"]), f1)
        receivers = tuple(
            ReceiverSpec(_readonly(np.asarray(r["position"], dtype=float)),
                         float(r["eh_requirement"]))
            for r in data["receivers"]
        )
        device = DeviceParams(**{k: float(v) for k, v in data.get("device", {}).items()})
        strip = MicrostripParams(**{k: float(v) for k, v in data.get("microstrip", {}).items()})
        sv = dict(data.get("solver", {}))
        for key in ("max_outer_iters", "max_sca_iters"):
            if key in sv:
                sv[key] = int(sv[key])
        solver = SolverSettings(**{k: (float(v) if k not in ("max_outer_iters", "max_sca_iters")
                                       else v) for k, v in sv.items()})
        seed = int(data.get("seed", 0))
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"bad scenario data: {exc}") from exc
    cfg = ScenarioConfig(array, plan, receivers, device, strip, solver, seed)
    cfg.validate()
    return cfg


_RECEIVER_KEYS = ("x", "y", "z", "p_target")


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario from a text (.cfg/.ini) or .json file.

    The text format is sectioned key/value, one ``[receiver.<k>]`` section per
    device. See README for the full schema.
    """
    path = str(path)
    if path.endswith(".json"):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        return _scenario_from_dict(data)

    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ScenarioParseError(str(exc)) from exc

    def section(name, required=False):
        if parser.has_section(name):
            return dict(parser.items(name))
        if required:
            raise ScenarioParseError(f"{path}: missing required section [{name}]")
        return {}

    def numbers(raw: dict, context: str) -> dict:
        out = {}
        for k, v in raw.items():
            try:
                out[k] = float(v)
            except ValueError as exc:
                raise ScenarioParseError(
                    f"{path}: [{context}] {k} = {v!r} is not a number") from exc
        return out

    arr = section("array", required=True)
    freq = numbers(section("frequency", required=True), "frequency")
    data = {
        "array": {"architecture": arr.get("architecture", "fd").strip().lower(),
                  "length": numbers({"length": arr.get("length", "")}, "array")["length"]},
        "frequency": {"f1": freq.get("f1"),
                      "n_tones": int(freq.get("n_tones", 1))},
        "receivers": [],
        "device": numbers(section("device"), "device"),
        "microstrip": numbers(section("microstrip"), "microstrip"),
        "solver": numbers(section("solver"), "solver"),
    }
    if "delta_f" in freq:
        data["frequency"]["delta_f"] = freq["delta_f"]
    elif "bandwidth" in freq:
        data["frequency"]["bandwidth"] = freq["bandwidth"]
    else:
        raise ScenarioParseError(f"{path}: [frequency] needs delta_f or bandwidth")
    if "seed" in data["solver"]:
        data["seed"] = int(data["solver"].pop("seed"))
    for name in sorted(parser.sections()):
        if not name.startswith("receiver"):
            continue
        vals = numbers(dict(parser.items(name)), name)
        missing = [k for k in _RECEIVER_KEYS if k not in vals]
        if missing:
            raise ScenarioParseError(f"{path}: [{name}] missing keys: {missing}")
        data["receivers"].append({
            "position": [vals["x"], vals["y"], vals["z"]],
            "eh_requirement": vals["p_target"],
        })
    return _scenario_from_dict(data)


def save_scenario(config: ScenarioConfig, path) -> None:
    """Write a scenario back out; format chosen by extension (.json or text)."""
    path = str(path)
    data = config.to_dict()
    if path.endswith(".json"):
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    lines = ["[array]",
             f"architecture = {data['array']['architecture']}",
             f"length = {data['array']['length']!r}",
             "",
             "[frequency]",
             f"f1 = {data['frequency']['f1']!r}",
             f"n_tones = {data['frequency']['n_tones']}",
             f"delta_f = {data['frequency']['delta_f']!r}",
             ""]
    for i, r in enumerate(data["receivers"], start=1):
        lines += [f"[receiver.{i}]",
                  f"x = {r['position'][0]!r}",
                  f"y = {r['position'][1]!r}",
                  f"z = {r['position'][2]!r}",
                  f"p_target = {r['eh_requirement']!r}",
                  ""]
    for sec in ("device", "microstrip", "solver"):
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v!r}" for k, v in data[sec].items()]
        if sec == "solver":
            lines.append(f"seed = {data['seed']}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))

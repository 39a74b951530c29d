import io
import json
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

from dotenv.parser import parse_stream
from simpleeval import simple_eval

from cost_functional import CostKind, CostSpec
from feedback_controls import FeedbackControl, SequenceScheme
from optimizer import ParamBox
from snse_integrator import SimConfig
from spectral_core import SpectralField
from stochastic_forcing import NoiseKind, NoiseModel

VERSION = "1.0.0"

# File Paths
ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.path.join(ROOT_DIR, 'data')
SETTINGS_FILE = os.path.join(DATA_DIR, 'settings.json')
RESULTS_DIR = os.path.join(ROOT_DIR, 'results')

DEFAULT_SETTINGS = {
    "threads": 1,
    "log_level": "INFO",
    "results_dir": RESULTS_DIR,
    "long_format": False,
}

EVAL_NAMES = {"pi": math.pi, "e": math.e}


class ConfigError(ValueError):
    """Bad run configuration; names the offending key and source line."""

    def __init__(self, key, line, message):
        self.key = key
        self.line = line
        where = f"line {line}" if line else "config"
        super().__init__(f"{where}: {key}: {message}")


def load_settings(path=SETTINGS_FILE):
    """Runtime knobs that never change results; defaults updated from settings.json."""
    settings = dict(DEFAULT_SETTINGS)
    if os.path.exists(path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                settings.update(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            print(f"⚠️ Warning: failed to load {path}: {e}")
    return settings


# value parsers: raw text -> python value, raising ValueError with a short reason

def _scalar(text):
    try:
        return simple_eval(text, names=EVAL_NAMES)
    except Exception as e:
        raise ValueError(f"cannot evaluate '{text}' ({e})")


def _float(text):
    value = _scalar(text)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got '{text}'")
    return float(value)


def _int(text):
    value = _scalar(text)
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ValueError(f"expected an integer, got '{text}'")
    return value


def _complex(text):
    value = _scalar(text)
    if isinstance(value, bool) or not isinstance(value, (int, float, complex)):
        raise ValueError(f"expected a number, got '{text}'")
    return complex(value) if isinstance(value, complex) else float(value)


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got '{text}'")


def _str(text):
    return text.strip()


def _items(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def _floats(text):
    return [_float(part) for part in _items(text)]


def _ints(text):
    return [_int(part) for part in _items(text)]


def _mode(kx, ky):
    return (_int(kx), _int(ky))


def _mode_list(text):
    """'1:0, 0:1' -> [(1, 0), (0, 1)]"""
    modes = []
    for part in _items(text):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ValueError(f"expected kx:ky, got '{part}'")
        modes.append(_mode(*pieces))
    return modes


def _amplitudes(text):
    """'1:0:0.5, 0:1:1j' -> {(1, 0): 0.5, (0, 1): 1j}"""
    out = {}
    for part in _items(text):
        pieces = part.split(":")
        if len(pieces) != 3:
            raise ValueError(f"expected kx:ky:amplitude, got '{part}'")
        mode = _mode(pieces[0], pieces[1])
        if mode in out:
            raise ValueError(f"mode {mode} listed twice")
        out[mode] = _complex(pieces[2])
    return out


def _profiles(text):
    """'1:0:-0.5, 2:1:0@0|0.4@1' -> {(1, 0): -0.5, (2, 1): [(0, 0), (1, 0.4)]}"""
    out = {}
    for part in _items(text):
        pieces = part.split(":")
        if len(pieces) != 3:
            raise ValueError(f"expected kx:ky:value or kx:ky:v0@t0|v1@t1, got '{part}'")
        mode = _mode(pieces[0], pieces[1])
        if mode in out:
            raise ValueError(f"mode {mode} listed twice")
        spec = pieces[2]
        if "@" in spec:
            points = []
            for point in spec.split("|"):
                value, _, at = point.partition("@")
                if not at:
                    raise ValueError(f"breakpoint '{point}' needs value@time")
                points.append((_float(at), _complex(value)))
            out[mode] = points
        else:
            out[mode] = _complex(spec)
    return out


def _coords(text):
    """'gain:1:0, base:0:1' -> [('gain', (1, 0)), ('base', (0, 1))]"""
    out = []
    for part in _items(text):
        pieces = part.split(":")
        if len(pieces) != 3 or pieces[0].strip() not in ("gain", "base"):
            raise ValueError(f"expected gain:kx:ky or base:kx:ky, got '{part}'")
        out.append((pieces[0].strip(), _mode(pieces[1], pieces[2])))
    return out


def _choice(*options):
    def parse(text):
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got '{value}'")
        return value
    return parse


@contextmanager
def _blame(key, line):
    """Re-raise validation errors from object construction against a config key."""
    try:
        yield
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(key, line, str(e)) from e


# key -> (parser, default); REQUIRED marks keys without a default
REQUIRED = object()

SCHEMA = {
    'sim.n': (_int, REQUIRED),
    'sim.nu': (_float, REQUIRED),
    'sim.dt': (_float, REQUIRED),
    'sim.t_final': (_float, REQUIRED),
    'sim.stop_m': (_float, 2.0),
    'sim.stop_mtilde': (_float, 1.0),
    'sim.nonlinear': (_bool, True),
    'sim.u0': (_amplitudes, {}),
    'sim.blowup_vnorm2': (_float, 1e10),
    'noise.kind': (_choice(*(k.value for k in NoiseKind)), NoiseKind.OFF.value),
    'noise.sigma': (_float, 0.0),
    'noise.alpha': (_float, 2.0),
    'noise.modes': (_mode_list, []),
    'control.gains': (_profiles, {}),
    'control.base': (_profiles, {}),
    'control.cap_k': (_float, 1.0),
    'control.state_radius': (_float, 3.0),
    'cost.kind': (_choice(*(k.value for k in CostKind)), CostKind.VORTICITY.value),
    'cost.eps': (_float, 0.5),
    'cost.target': (_amplitudes, {}),
    'mc.paths': (_int, 100),
    'mc.seed': (_int, 0),
    'experiment.scheme': (_choice(*(s.value for s in SequenceScheme)), SequenceScheme.GAIN_SCALE.value),
    'experiment.n_list': (_ints, None),
    'experiment.s_list': (_floats, None),
    'experiment.dt_list': (_floats, None),
    'experiment.t_list': (_floats, None),
    'experiment.delta': (_float, 0.01),
    'experiment.abs_tol': (_float, 0.0),
    'experiment.final_ratio': (_float, 0.05),
    'experiment.box_coords': (_coords, None),
    'experiment.box_lower': (_floats, None),
    'experiment.box_upper': (_floats, None),
    'experiment.budget': (_int, None),
    'experiment.samples': (_int, 1_000_000),
    'experiment.instances': (_int, 100),
    'experiment.label': (_str, ""),
    'experiment.min_order': (_float, None),
}


@dataclass(frozen=True, eq=False)
class RunSpec:
    """A fully validated run configuration plus the objects it builds."""

    values: Dict[str, object]
    lines: Dict[str, int]
    raw: Dict[str, str]
    path: str = ""
    sim: SimConfig = field(init=False, repr=False)
    noise: NoiseModel = field(init=False, repr=False)
    control: FeedbackControl = field(init=False, repr=False)
    cost: CostSpec = field(init=False, repr=False)
    box: Optional[ParamBox] = field(init=False, repr=False)

    def __post_init__(self):
        v = self.values
        n = v['sim.n']
        with self._blame('sim.u0'):
            u0 = SpectralField.real_from_modes(n, v['sim.u0'])
        with self._blame('sim.dt'):
            sim = SimConfig(n, v['sim.nu'], v['sim.dt'], v['sim.t_final'], v['sim.stop_m'],
                            v['sim.stop_mtilde'], u0, v['sim.nonlinear'], v['sim.blowup_vnorm2'])
        with self._blame('noise.modes'):
            noise = NoiseModel(n, NoiseKind(v['noise.kind']), v['noise.sigma'], v['noise.alpha'],
                               tuple(v['noise.modes']))
        with self._blame('control.gains'):
            control = FeedbackControl.build(n, v['sim.t_final'], v['control.gains'], v['control.base'],
                                            v['control.cap_k'], v['control.state_radius'])
        with self._blame('cost.target'):
            target = SpectralField.real_from_modes(n, v['cost.target']) if v['cost.target'] else None
        with self._blame('cost.kind'):
            cost = CostSpec(CostKind(v['cost.kind']), v['cost.eps'], target=target)
        box = None
        if v['experiment.box_coords'] is not None:
            with self._blame('experiment.box_coords'):
                box = ParamBox(v['experiment.box_lower'] or [], v['experiment.box_upper'] or [],
                               tuple(v['experiment.box_coords']), control)
        for name, obj in (("sim", sim), ("noise", noise), ("control", control), ("cost", cost), ("box", box)):
            object.__setattr__(self, name, obj)

    def _blame(self, key):
        return _blame(key, self.lines.get(key, 0))

    @property
    def paths(self):
        return self.values['mc.paths']

    @property
    def seed(self):
        return self.values['mc.seed']

    def get(self, key):
        return self.values[key]

    def require(self, keys, subcommand):
        missing = [k for k in keys if self.values.get(k) is None]
        if missing:
            raise ConfigError(missing[0], 0, f"required by '{subcommand}' but not set")

    def with_overrides(self, seed=None, paths=None):
        values = dict(self.values)
        raw = dict(self.raw)
        if seed is not None:
            values['mc.seed'] = _check_value('mc.seed', seed, 0)
            raw['mc.seed'] = str(seed)
        if paths is not None:
            values['mc.paths'] = _check_value('mc.paths', paths, 0)
            raw['mc.paths'] = str(paths)
        return replace(self, values=values, raw=raw)

    def echo(self):
        """key=value lines for every bound key, in schema order."""
        return [f"{key}={self.raw[key]}" for key in SCHEMA if key in self.raw]


def _check_value(key, value, line):
    """Constraints that depend only on the value itself."""
    def fail(message):
        raise ConfigError(key, line, message)

    if key == 'sim.n' and value < 1:
        fail("sim.n must be >= 1")
    if key in ('sim.nu', 'sim.dt', 'sim.t_final', 'sim.stop_mtilde', 'control.cap_k',
               'control.state_radius', 'experiment.delta', 'sim.blowup_vnorm2') and not value > 0:
        fail(f"{key} must be > 0")
    if key == 'sim.stop_m' and not value > 1:
        fail("sim.stop_m must be > 1")
    if key == 'experiment.abs_tol' and value < 0:
        fail("experiment.abs_tol must be >= 0")
    if key == 'experiment.final_ratio' and not 0 < value <= 1:
        fail("experiment.final_ratio must be in (0,1]")
    if key == 'noise.sigma' and value < 0:
        fail("noise.sigma must be >= 0")
    if key == 'noise.alpha' and not value > 1:
        fail("noise.alpha must be > 1")
    if key == 'cost.eps' and not 0 < value < 1:
        fail("cost.eps must be in (0,1)")
    if key == 'mc.paths' and value < 2:
        fail("mc.paths must be >= 2")
    if key == 'mc.seed' and not 0 <= value < 2 ** 64:
        fail("mc.seed must be an unsigned 64-bit integer")
    if key in ('experiment.samples', 'experiment.instances', 'experiment.budget') and value < 1:
        fail(f"{key} must be >= 1")
    if key == 'experiment.n_list' and any(n < 1 for n in value):
        fail("experiment.n_list entries must be >= 1")
    return value


def parse_config_text(text, path="<string>"):
    values, lines, raw = {}, {}, {}
    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        if binding.error:
            snippet = binding.original.string.strip()
            raise ConfigError(snippet.split("=")[0].strip() or "?", line, f"malformed line '{snippet}'")
        if binding.key is None:
            continue
        key = binding.key
        if key not in SCHEMA:
            raise ConfigError(key, line, "unknown key")
        if key in values:
            raise ConfigError(key, line, f"duplicate key (first set on line {lines[key]})")
        if binding.value is None or not binding.value.strip():
            raise ConfigError(key, line, "missing value")
        parser, _ = SCHEMA[key]
        try:
            value = parser(binding.value)
        except ValueError as e:
            raise ConfigError(key, line, str(e)) from e
        values[key] = _check_value(key, value, line)
        lines[key] = line
        raw[key] = binding.value.strip()

    for key, (_, default) in SCHEMA.items():
        if key in values:
            continue
        if default is REQUIRED:
            raise ConfigError(key, 0, "required key is missing")
        values[key] = default

    for key in ('experiment.n_list', 'experiment.dt_list', 'experiment.t_list', 'experiment.s_list'):
        if values[key] is not None and not values[key]:
            raise ConfigError(key, lines.get(key, 0), "list must not be empty")
    if values['experiment.box_coords'] is not None:
        for key in ('experiment.box_lower', 'experiment.box_upper'):
            if values[key] is None:
                raise ConfigError(key, 0, "required when experiment.box_coords is set")
    if values['cost.kind'] == CostKind.V_TRACKING.value and not values['cost.target']:
        raise ConfigError('cost.target', lines.get('cost.kind', 0), "v-tracking cost needs cost.target")
    return RunSpec(values, lines, raw, path)


def parse_config(path):
    """
    Parse a key = value run file (dotted section keys, '#' comments,
    comma-separated lists) into a validated RunSpec.
    """
    if not os.path.exists(path):
        raise ConfigError("--config", 0, f"file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    return parse_config_text(text, path)

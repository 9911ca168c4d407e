"""Command-line interface: configuration, dispatch and result files.

Configuration is an INI file with one section per module. Every key is also a
flag (``coupler_std`` becomes ``--coupler-std``); flags override the file and
the file overrides the defaults. Unknown sections or keys are rejected.

Each run writes plain CSV data files, a JSON summary carrying
``schema_version`` and the resolved configuration, and an ``.ini`` echo that
reproduces the run when passed back through ``--config``. Files are written to
a temporary name and renamed into place.

Exit codes: 0 success, 2 invalid configuration, 3 an optimization stopped at
its evaluation budget while ``strict`` is set.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .disorder import (
    STREAM_FABRICATION,
    DisorderModel,
    InstanceSeed,
    MeshInstance,
    instance_rng,
    sample_couplers,
    sample_losses,
    sample_mesh_instance,
)
from .experiments import (
    IPEA_LAYERS,
    IPEA_MODES,
    IPEA_TUNE_OPTIONS,
    IpeaConfig,
    WalkConfig,
    correlation_mass_split,
    excess_kurtosis,
    ipea_study,
    log_density_r2,
    participation_ratio,
    prepared_state,
    run_ipea,
    run_walk_ensemble,
    variance_exponent,
)
from .gates import nominal_cnot_program, nominal_cphase_program
from .mesh import MeshTopology
from .tuner import ProgramObjective, TuneOptions, default_tune_options, monte_carlo_gate_study, optimize_program

SCHEMA_VERSION = "1.0"
OUTPUT_DIR_ENV = "MESHSIM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "meshsim-results"
COMMANDS = ("simulate-gate", "optimize-gate", "study", "ipea", "qrw", "sample-fab")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_BUDGET = 3


class ConfigError(ValueError):
    pass


# -- configuration schema ----------------------------------------------------------


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    kind: type
    default: Any
    help: str
    check: Optional[Callable[[Any], bool]] = None
    requirement: str = ""
    choices: tuple = ()

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0.0 <= v <= 1.0


OPTIONS = (
    Option("run", "seed", int, 0, "master seed", _nonneg, "non-negative"),
    Option("run", "threads", int, 1, "worker processes; results do not depend on it", lambda v: v >= 1, "at least 1"),
    Option("run", "output_dir", str, "", f"output directory; empty means ${OUTPUT_DIR_ENV} or ./{DEFAULT_OUTPUT_DIR}"),
    Option("run", "strict", bool, False, "exit 3 when an optimization stops at its evaluation budget"),
    Option("run", "instances", int, 200, "instances for study and ipea", lambda v: v >= 1, "at least 1"),
    Option("disorder", "coupler_mean", float, 0.5, "mean coupler transitivity", _unit, "in [0, 1]"),
    Option("disorder", "coupler_std", float, 0.043, "coupler transitivity standard deviation", _nonneg, "non-negative"),
    Option("disorder", "loss_mean", float, 0.0516, "mean phase-shifter power loss", _unit, "in [0, 1]"),
    Option("disorder", "loss_std", float, 0.0284, "phase-shifter loss standard deviation", _nonneg, "non-negative"),
    Option("tuner", "n_starts", int, 0, "multistart count; 0 picks the command default", _nonneg, "non-negative"),
    Option("tuner", "max_evaluations", int, 0, "evaluation budget per program; 0 picks the command default", _nonneg, "non-negative"),
    Option("tuner", "local_tolerance", float, 1e-8, "relative infidelity change ending a local search", lambda v: v > 0, "positive"),
    Option("tuner", "tune_seed", int, 0, "scrambling seed of the Sobol start points", _nonneg, "non-negative"),
    Option("gate", "gate", str, "cnot", "gate to simulate, optimize or study", choices=("cnot", "cphase")),
    Option("gate", "phase", float, math.pi, "CPHASE phase in radians (simulate-gate, optimize-gate)", math.isfinite, "finite"),
    Option("gate", "instance", int, -1, "instance index for simulate-gate/optimize-gate; -1 is the ideal chip", lambda v: v >= -1, "at least -1"),
    Option("ipea", "eigenphase", float, 0.625, "eigenphase lambda", lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    Option("ipea", "n_bits", int, 3, "bits to estimate", lambda v: v >= 1, "at least 1"),
    Option("ipea", "optimize", bool, False, "tune each section before cascading"),
    Option("ipea", "aggregation", str, "min", "combine per-iteration fidelities by", choices=("min", "mean")),
    Option("ipea", "shots", int, 0, "simulated detections per bit; 0 uses exact probabilities", _nonneg, "non-negative"),
    Option("qrw", "phi_max_tid", float, 0.0, "time-independent phase disorder strength (radians)", _nonneg, "non-negative"),
    Option("qrw", "phi_max_td", float, 0.0, "time-dependent phase disorder strength (radians)", _nonneg, "non-negative"),
    Option("qrw", "realizations", int, 1000, "disorder realizations averaged", lambda v: v >= 1, "at least 1"),
    Option("qrw", "walk_layers", int, 15, "walk layers after preparation and routing", lambda v: v >= 1, "at least 1"),
    Option("qrw", "modes", int, 36, "waveguides", lambda v: v >= 4, "at least 4"),
    Option("qrw", "include_fabrication", bool, False, "sample coupler and loss disorder per realization"),
    Option("qrw", "first_realization", int, 0, "index of the first realization", _nonneg, "non-negative"),
    Option("fab", "samples", int, 100000, "coupler and loss samples drawn", lambda v: v >= 1, "at least 1"),
)
OPTION_BY_KEY = {o.key: o for o in OPTIONS}
SECTIONS = tuple(dict.fromkeys(o.section for o in OPTIONS))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def convert(key: str, raw: Any) -> Any:
    """Parse and validate one value; errors name the key."""
    opt = OPTION_BY_KEY.get(key)
    if opt is None:
        raise ConfigError(f"unknown key {key!r}")
    try:
        if isinstance(raw, str):
            value = _parse_bool(raw) if opt.kind is bool else opt.kind(raw.strip())
        else:
            value = opt.kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    if opt.kind is float and not math.isfinite(value) and opt.check is not None:
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    if opt.choices and value not in opt.choices:
        raise ConfigError(f"{key}: must be one of {', '.join(opt.choices)}, got {value!r}")
    if opt.check is not None and not opt.check(value):
        raise ConfigError(f"{key}: must be {opt.requirement}, got {raw!r}")
    return value


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """A command plus a value for every key of :data:`OPTIONS`."""

    command: str
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> Dict[str, Any]:
        return {o.key: self.values[o.key] for o in OPTIONS if o.section == name}

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        return {s: self.section(s) for s in SECTIONS}

    def to_ini(self) -> str:
        lines = [f"# re-run with: meshsim {self.command} --config <this file>"]
        for s in SECTIONS:
            lines.append(f"[{s}]")
            lines += [f"{k} = {_format_value(v)}" for k, v in self.section(s).items()]
            lines.append("")
        return "\n".join(lines)

    @property
    def output_dir(self) -> Path:
        return Path(self["output_dir"] or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)


def read_config_file(path: str) -> Dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            opt = OPTION_BY_KEY.get(key)
            if opt is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if opt.section != section:
                raise ConfigError(f"key {key!r} belongs in [{opt.section}], not [{section}]")
            values[key] = convert(key, raw)
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshsim", description="Disordered MZI-mesh simulations.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "simulate-gate": "post-selected transform of a nominal gate on one chip",
        "optimize-gate": "tune a gate's phases on one chip",
        "study": "Monte Carlo pre/post-tuning fidelities of a gate",
        "ipea": "iterative phase estimation over disordered chips",
        "qrw": "ensemble-averaged two-photon quantum walk",
        "sample-fab": "draw fabrication samples and compare to their distributions",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="INI file with [section] key = value entries")
        for s in SECTIONS:
            group = p.add_argument_group(f"[{s}]")
            for o in (o for o in OPTIONS if o.section == s):
                kwargs = {"dest": o.key, "help": f"{o.help} (default: {_format_value(o.default)})", "type": str}
                if o.kind is bool:
                    kwargs.update(nargs="?", const="true", metavar="BOOL")
                group.add_argument(o.flag, **kwargs)
    return parser


def parse_config(argv: Sequence[str]) -> RunConfig:
    """Resolve defaults, then the ``--config`` file, then flags."""
    ns = vars(build_parser().parse_args(list(argv)))
    command = ns.pop("command")
    values = {o.key: o.default for o in OPTIONS}
    path = ns.pop("config", None)
    if path is not None:
        values.update(read_config_file(path))
    for key, raw in ns.items():
        values[key] = convert(key, raw)
    return RunConfig(command, values)


# -- result files ------------------------------------------------------------------


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(text.encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def csv_text(header: Optional[Sequence[str]], rows) -> str:
    lines = [",".join(header)] if header else []
    lines += [",".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    return v


def load_summary(path) -> dict:
    """Read a JSON summary, refusing schema major versions this code does not know."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    version = str(data.get("schema_version", ""))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ValueError(f"unsupported schema_version {version!r} in {path}")
    return data


class Bundle:
    """Collects the files of one run and writes them with a shared stem."""

    def __init__(self, config: RunConfig, stem: str):
        self.config = config
        self.stem = stem
        self.dir = config.output_dir
        self.written: List[Path] = []

    def _write(self, name: str, text: str) -> Path:
        path = self.dir / name
        atomic_write(path, text)
        self.written.append(path)
        return path

    def csv(self, suffix: str, header, rows) -> Path:
        return self._write(f"{self.stem}{suffix}.csv", csv_text(header, rows))

    def summary(self, payload: dict) -> Path:
        doc = {"schema_version": SCHEMA_VERSION, "command": self.config.command, "config": self.config.as_dict()}
        doc.update(payload)
        self._write(f"{self.stem}.ini", self.config.to_ini())
        return self._write(f"{self.stem}.json", json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------------


def disorder_model(cfg: RunConfig) -> DisorderModel:
    return DisorderModel(**cfg.section("disorder"))


def tune_options(cfg: RunConfig, base: TuneOptions) -> TuneOptions:
    return TuneOptions(
        n_starts=cfg["n_starts"] or base.n_starts,
        max_evaluations=cfg["max_evaluations"] or base.max_evaluations,
        local_tolerance=cfg["local_tolerance"],
        seed=cfg["tune_seed"],
    )


def _gate_setup(cfg: RunConfig):
    if cfg["gate"] == "cnot":
        prog, target = nominal_cnot_program()
    else:
        prog, target = nominal_cphase_program(cfg["phase"])
    topo = MeshTopology(prog.modes[1], prog.layers[1])
    if cfg["instance"] < 0:
        inst = MeshInstance.ideal(topo)
    else:
        inst = sample_mesh_instance(disorder_model(cfg), topo, InstanceSeed(cfg["seed"], cfg["instance"]))
    return prog, target, inst


def _transform_rows(v: np.ndarray):
    return [(o, i, v[o, i].real, v[o, i].imag) for o in range(v.shape[0]) for i in range(v.shape[1])]


def cmd_simulate_gate(cfg: RunConfig) -> int:
    prog, target, inst = _gate_setup(cfg)
    obj = ProgramObjective(inst, prog, target)
    v = obj.transform()
    out = Bundle(cfg, f"simulate-gate-{cfg['gate']}")
    out.csv("", ("output", "input", "re", "im"), _transform_rows(v))
    f = obj.fidelity()
    out.summary({"fidelity": f, "success_probability": np.sum(np.abs(v) ** 2, axis=0), "program": prog.to_table()})
    print(f"{cfg['gate']}: fidelity {f:.6f}")
    return EXIT_OK


def cmd_optimize_gate(cfg: RunConfig) -> int:
    prog, target, inst = _gate_setup(cfg)
    res = optimize_program(inst, prog, target, tune_options(cfg, default_tune_options(cfg["gate"])))
    out = Bundle(cfg, f"optimize-gate-{cfg['gate']}")
    rows = [(l, j, s.theta, s.phi) for (l, j), s in sorted(res.program.settings.items())]
    out.csv("", ("layer", "mzi", "theta", "phi"), rows)
    out.summary(
        {
            "nominal_fidelity": res.nominal_fidelity,
            "fidelity": res.fidelity,
            "evaluations": res.evaluations,
            "budget_limited": res.budget_limited,
            "program": res.program.to_table(),
        }
    )
    print(f"{cfg['gate']}: fidelity {res.nominal_fidelity:.6f} -> {res.fidelity:.8f}")
    return EXIT_BUDGET if cfg["strict"] and res.budget_limited else EXIT_OK


def cmd_study(cfg: RunConfig) -> int:
    gate = cfg["gate"]
    res = monte_carlo_gate_study(
        gate, disorder_model(cfg), cfg["instances"], cfg["seed"], tune_options(cfg, default_tune_options(gate)), cfg["threads"]
    )
    out = Bundle(cfg, f"study-{gate}")
    rows = [(r.index, r.pre, r.post, r.evaluations, r.budget_limited) for r in res.records]
    out.csv("", ("index", "pre_fidelity", "post_fidelity", "evaluations", "budget_limited"), rows)
    limited = sum(r.budget_limited for r in res.records)
    out.summary(
        {
            "instances": len(res.records),
            "median_pre_fidelity": res.median_pre,
            "median_post_fidelity": res.median_post,
            "min_post_fidelity": float(res.post.min()),
            "budget_limited_instances": limited,
        }
    )
    print(f"{gate}: median fidelity {res.median_pre:.6f} -> {res.median_post:.8f} over {len(res.records)} instances")
    return EXIT_BUDGET if cfg["strict"] and limited else EXIT_OK


def ipea_config(cfg: RunConfig) -> IpeaConfig:
    return IpeaConfig(cfg["eigenphase"], cfg["n_bits"], cfg["optimize"], cfg["aggregation"], cfg["shots"] or None)


def cmd_ipea(cfg: RunConfig) -> int:
    config = ipea_config(cfg)
    options = tune_options(cfg, IPEA_TUNE_OPTIONS)
    res = ipea_study(config, disorder_model(cfg), cfg["instances"], cfg["seed"], options, cfg["threads"])
    ideal = run_ipea(config, MeshInstance.ideal(MeshTopology(IPEA_MODES, IPEA_LAYERS)), options)
    out = Bundle(cfg, "ipea")
    out.csv("", ("index", "bits", "fidelity"), [(r.index, r.bits, r.fidelity) for r in res.records])
    counts: Dict[str, int] = {}
    for r in res.records:
        counts[r.bits] = counts.get(r.bits, 0) + 1
    out.summary(
        {
            "instances": len(res.records),
            "median_fidelity": res.median_fidelity,
            "bit_string_counts": dict(sorted(counts.items())),
            "ideal_bits": ideal.bit_string,
        }
    )
    print(f"ipea: median fidelity {res.median_fidelity:.6f}, ideal bits {ideal.bit_string}")
    return EXIT_OK


def walk_config(cfg: RunConfig) -> WalkConfig:
    return WalkConfig(
        n_walk_layers=cfg["walk_layers"],
        phi_max_tid=cfg["phi_max_tid"],
        phi_max_td=cfg["phi_max_td"],
        n_realizations=cfg["realizations"],
        include_fabrication=cfg["include_fabrication"],
        model=disorder_model(cfg),
        n_modes=cfg["modes"],
        first_realization=cfg["first_realization"],
    )


def walk_observables(config: WalkConfig, res) -> dict:
    n = res.output_density
    near, far = correlation_mass_split(res.gamma)
    prep = prepared_state()
    obs = {
        "participation_ratio": participation_ratio(n),
        "excess_kurtosis": excess_kurtosis(n),
        "log_density_r2": log_density_r2(n),
        "correlation_mass_near": near,
        "correlation_mass_far": far,
        "prepared_relative_phase": float(np.angle(prep[2] / prep[0])),
    }
    if config.n_walk_layers >= 6:
        obs["variance_exponent"] = variance_exponent(res.variance, 5, config.n_walk_layers)
    return obs


def cmd_qrw(cfg: RunConfig) -> int:
    config = walk_config(cfg)
    res = run_walk_ensemble(config, cfg["seed"], cfg["threads"])
    out = Bundle(cfg, "qrw")
    out.csv("-density", None, res.density)
    out.csv("-gamma", None, res.gamma)
    out.csv("-variance", ("walk_layer", "variance"), [(l + 1, v) for l, v in enumerate(res.variance)])
    out.summary(
        {
            "seed": cfg["seed"],
            "realizations": config.n_realizations,
            "first_realization": config.first_realization,
            "n_modes": config.n_modes,
            "n_layers": config.topology.n_layers,
            "launch_mode": config.launch_mode,
            "observables": walk_observables(config, res),
        }
    )
    print(f"qrw: {config.n_realizations} realizations, participation ratio {participation_ratio(res.output_density):.3f}")
    return EXIT_OK


def truncated_normal_moments(mean: float, std: float, lo: float, hi: float):
    if std == 0:
        return mean, 0.0
    d = stats.truncnorm((lo - mean) / std, (hi - mean) / std, loc=mean, scale=std)
    return float(d.mean()), float(d.std())


def cmd_sample_fab(cfg: RunConfig) -> int:
    model = disorder_model(cfg)
    rng = instance_rng(InstanceSeed(cfg["seed"], 0), STREAM_FABRICATION)
    n = cfg["samples"]
    couplers = sample_couplers(model, rng, n)
    losses = sample_losses(model, rng, n)
    out = Bundle(cfg, "sample-fab")
    out.csv("", ("index", "coupler_transitivity", "shifter_loss"), zip(range(n), couplers, losses))
    summary = {}
    for name, x, mean, std in (("coupler", couplers, model.coupler_mean, model.coupler_std), ("loss", losses, model.loss_mean, model.loss_std)):
        m, s = truncated_normal_moments(mean, std, 0.0, 1.0)
        summary[name] = {"mean": float(x.mean()), "std": float(x.std()), "expected_mean": m, "expected_std": s}
    out.summary({"samples": n, **summary})
    c = summary["coupler"]
    print(f"sample-fab: coupler mean {c['mean']:.4f} std {c['std']:.4f}")
    return EXIT_OK


HANDLERS = {
    "simulate-gate": cmd_simulate_gate,
    "optimize-gate": cmd_optimize_gate,
    "study": cmd_study,
    "ipea": cmd_ipea,
    "qrw": cmd_qrw,
    "sample-fab": cmd_sample_fab,
}


def validate(config: RunConfig) -> None:
    """Build the domain objects once so cross-field constraints fail before any work."""
    disorder_model(config)
    base = IPEA_TUNE_OPTIONS if config.command == "ipea" else default_tune_options(config["gate"])
    tune_options(config, base)
    if config.command == "ipea":
        ipea_config(config)
    if config.command == "qrw":
        walk_config(config)


def execute(config: RunConfig) -> int:
    return HANDLERS[config.command](config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_config(sys.argv[1:] if argv is None else argv)
        validate(config)
    except ValueError as exc:
        print(f"meshsim: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return execute(config)


if __name__ == "__main__":
    sys.exit(main())

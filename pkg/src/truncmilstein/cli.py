"""Config-driven command line entry point.

Config files are INI with sections ``[experiment]``, ``[model]``,
``[policy]`` and ``[run]``; see ``configs/`` for examples.  ``--set
section.key=value`` overrides a single entry.
"""

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .brownian import GENERATOR_ID, PathGrid, sample_path
from .exceptions import BlowUpError, PolicyRejectedError, TruncMilsteinError, UsageError
from .experiments import (ExperimentSpec, make_policy, moment_sweep, strong_error,
                          write_errors_csv, write_moments_csv, write_slopes_csv)
from .integrators import SCHEMES, is_truncated, simulate
from .sde_core import MODELS, builtin_model
from .truncation import TruncationContext, validate_policy

log = logging.getLogger("truncmilstein")

KINDS = ("convergence", "moments", "validate-policy", "single-path")


def _ints(text):
    return tuple(int(v) for v in _split(text))


def _floats(text):
    return tuple(float(v) for v in _split(text))


def _split(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _strs(text):
    return tuple(str(v) for v in _split(text))


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


# (section, key) -> (RunConfig field, parser)
_SCHEMA = {
    ("experiment", "kind"): ("kind", str),
    ("experiment", "schemes"): ("schemes", _strs),
    ("experiment", "t_end"): ("t_end", float),
    ("experiment", "reference"): ("reference", str),
    ("experiment", "reference_scheme"): ("reference_scheme", str),
    ("experiment", "reference_exponent"): ("reference_exponent", int),
    ("experiment", "coarse_exponents"): ("coarse_exponents", _ints),
    ("experiment", "samples"): ("samples", int),
    ("experiment", "seed"): ("seed", int),
    ("experiment", "error_power"): ("error_power", float),
    ("experiment", "p"): ("p", float),
    ("experiment", "q"): ("q", _opt_float),
    ("experiment", "p_list"): ("p_list", _floats),
    ("experiment", "delta_exponents"): ("delta_exponents", _ints),
    ("experiment", "step_exponent"): ("step_exponent", int),
    ("model", "name"): ("model", str),
    ("policy", "family"): ("policy_family", str),
    ("policy", "exponent"): ("policy_exponent", float),
    ("policy", "epsilon"): ("policy_epsilon", float),
    ("policy", "delta_star"): ("policy_delta_star", float),
    ("run", "out"): ("out", str),
    ("run", "workers"): ("workers", int),
}
_FIELD_KEYS = {v[0]: k for k, v in _SCHEMA.items()}


@dataclass
class RunConfig:
    kind: str = "convergence"
    model: str = "paper-example"
    model_params: dict = field(default_factory=dict)
    schemes: tuple = ("truncated-milstein",)
    policy_family: str = "power"
    policy_exponent: float = 5.0
    policy_epsilon: float = 0.1
    policy_delta_star: float = 1.0
    t_end: float = 2.0
    reference: str = "scheme"
    reference_scheme: str = "truncated-milstein"
    reference_exponent: int = 13
    coarse_exponents: tuple = (10, 9, 8, 7)
    samples: int = 1000
    seed: int = 20171
    error_power: float = 1.0
    p: float = 1.0
    q: float = None
    p_list: tuple = (1.0,)
    delta_exponents: tuple = (12, 11, 10, 9, 8, 7, 6)
    step_exponent: int = 6
    out: str = "results"
    workers: int = 1

    def set(self, section, key, value):
        if section == "model" and key != "name":
            self.model_params[key] = _model_value(value)
            return
        try:
            name, parse = _SCHEMA[(section, key)]
        except KeyError:
            raise UsageError(f"unknown config key {section}.{key}") from None
        try:
            setattr(self, name, parse(value))
        except ValueError as exc:
            raise UsageError(f"bad value for {section}.{key}: {exc}") from None

    def policy_params(self):
        return {"family": self.policy_family, "exponent": self.policy_exponent,
                "epsilon": self.policy_epsilon, "delta_star": self.policy_delta_star}

    def validate(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown experiment kind {self.kind!r}; one of {KINDS}")
        if self.model not in MODELS:
            raise UsageError(f"unknown model {self.model!r}; available: {sorted(MODELS)}")
        for s in list(self.schemes) + [self.reference_scheme]:
            if s not in SCHEMES:
                raise UsageError(f"unknown scheme {s!r}; available: {list(SCHEMES)}")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        validate_policy(make_policy(self.policy_params())).raise_if_failed()
        return self

    def spec(self):
        return ExperimentSpec(
            model=self.model, model_params=dict(self.model_params),
            schemes=tuple(self.schemes), policy=self.policy_params(), t_end=self.t_end,
            reference_exponent=self.reference_exponent,
            coarse_exponents=tuple(self.coarse_exponents), samples=self.samples,
            seed=self.seed, error_power=self.error_power, reference=self.reference,
            reference_scheme=self.reference_scheme, p=self.p, q=self.q)

    def to_mapping(self):
        """Nested ``{section: {key: value}}`` that :meth:`from_mapping` reads back."""
        out = {"experiment": {}, "model": {}, "policy": {}, "run": {}}
        data = asdict(self)
        for f in fields(self):
            if f.name == "model_params":
                continue
            section, key = _FIELD_KEYS[f.name]
            value = data[f.name]
            out[section][key] = list(value) if isinstance(value, tuple) else value
        for k, v in self.model_params.items():
            out["model"][k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_mapping(cls, mapping):
        cfg = cls(model_params={})
        for section, entries in mapping.items():
            for key, value in entries.items():
                if isinstance(value, list):
                    value = ", ".join(str(v) for v in value)
                cfg.set(section, key, value)
        return cfg


def _model_value(text):
    if isinstance(text, (int, float)):
        return float(text)
    parts = _split(text)
    try:
        vals = [float(v) for v in parts]
    except ValueError:
        raise UsageError(f"model parameter {text!r} is not numeric") from None
    return vals[0] if len(vals) == 1 and "," not in str(text) else tuple(vals)


def load_config(path=None, overrides=()):
    cfg = RunConfig(model_params={})
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(section, key, value)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override {item!r} is not section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        cfg.set(section, key, value.strip())
    return cfg


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(cfg, out, artifacts, started, extra=None):
    manifest = {
        "library_version": __version__,
        "increment_generator": GENERATOR_ID,
        "seed": cfg.seed,
        "config": cfg.to_mapping(),
        "artifacts": {name: _sha256(out / name) for name in artifacts},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "runtime_seconds": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_convergence(cfg, out):
    reports = strong_error(cfg.spec(), workers=cfg.workers)
    write_errors_csv(reports, out / "errors.csv")
    write_slopes_csv(reports, out / "slopes.csv")
    for rep in reports:
        print(f"{rep.scheme}: slope {rep.slope:.4f} +/- {rep.halfwidth:.4f}"
              f"{' (degenerate)' if rep.degenerate else ''}")
    return ["errors.csv", "slopes.csv"]


def run_moments(cfg, out):
    system = builtin_model(cfg.model, **cfg.model_params)
    policy = make_policy(cfg.policy_params())
    deltas = [2.0**-e for e in cfg.delta_exponents]
    names = []
    with open(out / "trend.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scheme", "p", "trend"))
        for s in cfg.schemes:
            table = moment_sweep(system, s, policy if is_truncated(s) else None,
                                 cfg.t_end, cfg.p_list, deltas, cfg.samples, cfg.seed,
                                 workers=cfg.workers)
            name = f"moments_{s}.csv"
            write_moments_csv(s, table, out / name)
            names.append(name)
            for p, tr in zip(table.p_list, table.trend):
                w.writerow((s, repr(float(p)), repr(float(tr))))
            print(f"{s}: max moment {np.max(table.sup_moment):.4g}, "
                  f"trend {', '.join(f'{t:.4g}' for t in table.trend)}")
    return names + ["trend.csv"]


def run_validate(cfg, out):
    report = validate_policy(make_policy(cfg.policy_params()))
    with open(out / "validation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("check", "passed", "worst_value", "worst_delta", "detail"))
        for c in report.checks:
            w.writerow((c.name, int(c.passed), repr(c.worst_value), repr(c.worst_delta),
                        c.detail))
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
    report.raise_if_failed()
    return ["validation.csv"]


def run_single_path(cfg, out):
    system = builtin_model(cfg.model, **cfg.model_params)
    policy = make_policy(cfg.policy_params())
    grid = PathGrid.dyadic(cfg.t_end, cfg.step_exponent)
    path = sample_path(grid, system.noise_dim, cfg.seed, 0)
    trajs = []
    for s in cfg.schemes:
        ctx = TruncationContext(policy, grid.step) if is_truncated(s) else None
        trajs.append(simulate(system, s, grid, path, ctx))
    header = ["t"]
    for s in cfg.schemes:
        if system.state_dim == 1:
            header.append(s)
        else:
            header.extend(f"{s}[{i}]" for i in range(system.state_dim))
        header.append(f"{s}:blown_up")
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(grid.times):
            row = [repr(float(t))]
            for tr in trajs:
                row.extend(repr(float(v)) for v in tr.states[k])
                row.append(int(tr.blown_up and k >= tr.blowup_index))
            w.writerow(row)
    for s, tr in zip(cfg.schemes, trajs):
        status = f"blew up at step {tr.blowup_index}" if tr.blown_up else "finite"
        print(f"{s}: {status}")
    return ["trajectory.csv"]


RUNNERS = {
    "convergence": run_convergence,
    "moments": run_moments,
    "validate-policy": run_validate,
    "single-path": run_single_path,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="truncmilstein",
        description="Strong-convergence experiments for truncated Milstein schemes.")
    ap.add_argument("--config", metavar="PATH", help="INI config file")
    ap.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                    dest="overrides", help="override section.key (repeatable)")
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--workers", type=int, metavar="N", help="worker threads")
    ap.add_argument("--seed", type=int, metavar="S", help="master seed")
    ap.add_argument("--version", action="version", version=__version__)
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        overrides = list(args.overrides)
        if args.out is not None:
            overrides.append(f"run.out={args.out}")
        if args.workers is not None:
            overrides.append(f"run.workers={args.workers}")
        if args.seed is not None:
            overrides.append(f"experiment.seed={args.seed}")
        cfg = load_config(args.config, overrides).validate()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = RUNNERS[cfg.kind](cfg, out)
        _write_manifest(cfg, out, artifacts, started)
    except PolicyRejectedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, TruncMilsteinError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()

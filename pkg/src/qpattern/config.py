"""Experiment configuration: INI-style key/value sections.

Grammar: standard ``configparser`` INI with the four sections below.
Unknown keys are errors (typos should not silently become defaults);
missing keys take the listed default, except ``run.seed`` which is
mandatory so no run ever depends on wall-clock entropy.

    [model]
    kind = fhn | nagumo | stuart_landau | ou | custom_scalar
    n_grid = 128            ; grid points (power of two recommended)
    domain_length = 64.0
    boundary = periodic | dirichlet
    d = 1.0                 ; diffusion
    a = 0.05                ; linear damping
    sigma = 0.1             ; noise amplitude
    b = 1.0                 ; flat noise multiplier (or b_multipliers list)
    kappa = <float>         ; asserted reaction Lipschitz bound on the tube
    ... kind-specific keys (fhn_alpha, fhn_eps, fhn_gamma, sl_mu, sl_omega,
        sl_twist, sl_twist2, poly_coeffs = c0,c1,c2,...)

    [tube]
    delta = 0.25
    metric = sup | l2
    manifold = auto | <path.csv|path.bin>
    settle_time = 200.0     ; for auto manifolds
    settle_dt =             ; optional coarser settle step
    n_phase = 512           ; cycle table resolution

    [run]
    kind = survival | fleming_viot | qsd | qed | q_process | phase |
           frequency_sweep | oracle_check
    seed = <int>            ; mandatory
    t_max = 100.0
    dt = 0.05
    n_paths = 200           ; independent-path run kinds
    n_particles = 64        ; ensemble run kinds
    snapshot_stride = 10
    burn_in = <time>        ; default 0.2 * t_max
    workers = 1
    t_probe =               ; phase/q_process probes
    sigmas = 0,0.05,0.1,0.2 ; frequency_sweep
    checkpoint_every = 0    ; steps; 0 disables
    stop_after_step =       ; debug: checkpoint and stop mid-run

    [output]
    directory = runs/out
    plots = true
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field as _dc_field
from typing import Any

import numpy as np

from .errors import ParseError, ValidationError
from .fields import DIRICHLET, PERIODIC
from .models import (
    ModelSpec,
    VectorPolynomial,
    fitzhugh_nagumo_model,
    nagumo_model,
    ou_model,
    stuart_landau_model,
)

RUN_KINDS = (
    "survival", "fleming_viot", "qsd", "qed", "q_process", "phase",
    "frequency_sweep", "oracle_check",
)

MODEL_KINDS = ("fhn", "nagumo", "stuart_landau", "ou", "custom_scalar")

_MODEL_KEYS = {
    "kind", "n_grid", "domain_length", "boundary", "d", "a", "sigma", "b",
    "b_multipliers", "kappa", "fhn_alpha", "fhn_eps", "fhn_gamma",
    "sl_mu", "sl_omega", "sl_twist", "sl_twist2", "poly_coeffs",
}
_TUBE_KEYS = {
    "delta", "metric", "manifold", "settle_time", "settle_dt", "n_phase",
}
_RUN_KEYS = {
    "kind", "seed", "t_max", "dt", "n_paths", "n_particles",
    "snapshot_stride", "burn_in", "workers", "t_probe", "sigmas",
    "checkpoint_every", "stop_after_step",
}
_OUTPUT_KEYS = {"directory", "plots"}


@dataclass
class ExperimentConfig:
    """Validated experiment description plus the raw key/value view."""

    model_kind: str
    n_grid: int
    domain_length: float
    boundary: str
    sigma: float
    model_params: dict[str, float]
    tube_delta: float
    tube_metric: str
    manifold_source: str
    settle_time: float
    settle_dt: float | None
    n_phase: int
    run_kind: str
    seed: int
    t_max: float
    dt: float
    n_paths: int
    n_particles: int
    snapshot_stride: int
    burn_in: float
    workers: int
    t_probe: float | None
    sigmas: tuple[float, ...]
    checkpoint_every: int
    stop_after_step: int | None
    out_dir: str
    plots: bool
    warnings: list[str] = _dc_field(default_factory=list)
    raw: dict[str, dict[str, str]] = _dc_field(default_factory=dict)

    def model_spec(self) -> ModelSpec:
        """Instantiate the model named by the config."""
        p = self.model_params
        kind = self.model_kind
        if kind == "fhn":
            spec = fitzhugh_nagumo_model(
                alpha=p.get("fhn_alpha", 0.1), eps=p.get("fhn_eps", 0.02),
                gamma=p.get("fhn_gamma", 1.0), d=p.get("d", 1.0),
                damping=p.get("a", 0.05), sigma=self.sigma, b=p.get("b", 1.0),
            )
        elif kind == "nagumo":
            spec = nagumo_model(
                alpha=p.get("fhn_alpha", 0.25), d=p.get("d", 1.0),
                a=p.get("a", 0.0), sigma=self.sigma, b=p.get("b", 1.0),
            )
        elif kind == "stuart_landau":
            spec = stuart_landau_model(
                mu=p.get("sl_mu", 1.0), omega=p.get("sl_omega", 1.0),
                twist=p.get("sl_twist", 0.3), twist2=p.get("sl_twist2", 0.0),
                damping=p.get("a", 1.0), sigma=self.sigma, b0=p.get("b", 1.0),
            )
        elif kind == "ou":
            spec = ou_model(
                d=p.get("d", 1.0), a=p.get("a", 1.0), sigma=self.sigma,
                b=p.get("b", 1.0),
            )
        elif kind == "custom_scalar":
            coeffs = p.get("poly_coeffs")
            if coeffs is None:
                raise ValidationError("custom_scalar needs poly_coeffs")
            spec = ModelSpec(
                d=p.get("d", 1.0), a=p.get("a", 0.0),
                poly=VectorPolynomial.scalar(coeffs),
                b_multipliers=np.array([p.get("b", 1.0)]),
                sigma=self.sigma, kappa_bound=p.get("kappa", np.nan),
            )
        else:  # pragma: no cover - guarded during parse
            raise ValidationError(f"unknown model kind {kind!r}")
        if "kappa" in p:
            spec.kappa_bound = p["kappa"]
        return spec

    def canonical_json(self) -> str:
        """Stable serialization of the raw keys (hash input)."""
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _get(cp, section, key, conv, default, errors, required=False):
    try:
        raw = cp.get(section, key, fallback=None)
        if raw is None or raw == "":
            if required:
                errors.append((f"{section}.{key}", "missing required key"))
                return default
            return default
        return conv(raw)
    except (ValueError, TypeError) as exc:
        errors.append((f"{section}.{key}", str(exc)))
        return default


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def load_config(path_or_text: str, overrides: dict[str, str] | None = None,
                is_text: bool = False) -> ExperimentConfig:
    """Parse and validate a config file.

    ``overrides`` maps ``section.key`` to replacement values (the CLI's
    flag > file > default precedence).  All problems are collected and
    reported together in the raised error.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if is_text:
            cp.read_string(path_or_text)
        else:
            with open(path_or_text, "r", encoding="utf-8") as fh:
                cp.read_file(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"config not found: {path_or_text}") from exc
    except configparser.Error as exc:
        raise ParseError(f"config syntax: {exc}") from exc

    for sec_key, value in (overrides or {}).items():
        if "." not in sec_key:
            raise ValidationError(f"override {sec_key!r} must be section.key")
        sec, key = sec_key.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, value)

    errors: list[tuple[str, str]] = []
    known = {"model": _MODEL_KEYS, "tube": _TUBE_KEYS, "run": _RUN_KEYS,
             "output": _OUTPUT_KEYS}
    for sec in cp.sections():
        if sec not in known:
            errors.append((sec, "unknown section"))
            continue
        for key in cp.options(sec):
            if key not in known[sec]:
                errors.append((f"{sec}.{key}", "unknown key"))

    model_kind = _get(cp, "model", "kind", str, "ou", errors)
    if model_kind not in MODEL_KINDS:
        errors.append(("model.kind", f"must be one of {MODEL_KINDS}"))
    run_kind = _get(cp, "run", "kind", str, "survival", errors)
    if run_kind not in RUN_KINDS:
        errors.append(("run.kind", f"must be one of {RUN_KINDS}"))
    boundary = _get(cp, "model", "boundary", str, PERIODIC, errors)
    if boundary not in (PERIODIC, DIRICHLET):
        errors.append(("model.boundary", "must be periodic or dirichlet"))
    metric = _get(cp, "tube", "metric", str, "sup", errors)
    if metric not in ("sup", "l2"):
        errors.append(("tube.metric", "must be sup or l2"))

    seed = _get(cp, "run", "seed", int, None, errors, required=True)
    t_max = _get(cp, "run", "t_max", float, 100.0, errors)
    dt = _get(cp, "run", "dt", float, 0.05, errors)
    if dt is not None and dt <= 0:
        errors.append(("run.dt", "must be positive"))
    if t_max is not None and dt and t_max < dt:
        errors.append(("run.t_max", "must cover at least one step"))

    model_params: dict[str, Any] = {}
    for key in ("d", "a", "b", "kappa", "fhn_alpha", "fhn_eps", "fhn_gamma",
                "sl_mu", "sl_omega", "sl_twist", "sl_twist2"):
        if cp.has_option("model", key):
            model_params[key] = _get(cp, "model", key, float, None, errors)
    if cp.has_option("model", "poly_coeffs"):
        model_params["poly_coeffs"] = _get(
            cp, "model", "poly_coeffs", _floats, (), errors
        )

    cfg = ExperimentConfig(
        model_kind=model_kind,
        n_grid=_get(cp, "model", "n_grid", int, 128, errors),
        domain_length=_get(cp, "model", "domain_length", float, 64.0, errors),
        boundary=boundary,
        sigma=_get(cp, "model", "sigma", float, 0.0, errors),
        model_params=model_params,
        tube_delta=_get(cp, "tube", "delta", float, 0.25, errors),
        tube_metric=metric,
        manifold_source=_get(cp, "tube", "manifold", str, "auto", errors),
        settle_time=_get(cp, "tube", "settle_time", float, 200.0, errors),
        settle_dt=_get(cp, "tube", "settle_dt", float, None, errors),
        n_phase=_get(cp, "tube", "n_phase", int, 512, errors),
        run_kind=run_kind,
        seed=seed if seed is not None else -1,
        t_max=t_max,
        dt=dt,
        n_paths=_get(cp, "run", "n_paths", int, 200, errors),
        n_particles=_get(cp, "run", "n_particles", int, 64, errors),
        snapshot_stride=_get(cp, "run", "snapshot_stride", int, 10, errors),
        burn_in=_get(cp, "run", "burn_in", float, -1.0, errors),
        workers=_get(cp, "run", "workers", int, 1, errors),
        t_probe=_get(cp, "run", "t_probe", float, None, errors),
        sigmas=_get(cp, "run", "sigmas", _floats, (), errors),
        checkpoint_every=_get(cp, "run", "checkpoint_every", int, 0, errors),
        stop_after_step=_get(cp, "run", "stop_after_step", int, None, errors),
        out_dir=_get(cp, "output", "directory", str, "qpattern_out", errors),
        plots=_get(cp, "output", "plots", lambda s: s.lower() in ("1", "true", "yes"),
                   True, errors),
        raw={sec: dict(cp.items(sec)) for sec in cp.sections()},
    )
    if cfg.burn_in < 0:
        cfg.burn_in = 0.2 * cfg.t_max
    if errors:
        listing = "; ".join(f"{k}: {msg}" for k, msg in errors)
        raise ValidationError(f"config invalid: {listing}")

    # assumption check is advisory: record, do not reject
    try:
        from .fields import SpectralBasis

        spec = cfg.model_spec()
        basis = SpectralBasis(cfg.boundary, cfg.n_grid, cfg.domain_length)
        cfg.warnings.extend(spec.validate_assumptions(basis))
    except ValidationError as exc:
        raise ValidationError(f"config invalid: model: {exc}") from exc
    return cfg

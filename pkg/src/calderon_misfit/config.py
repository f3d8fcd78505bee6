"""Run configuration: strict sectioned key=value text format.

Grammar (documented for script authors):

    # comment (full line or trailing)
    [section]            sections: geometry, mesh, bounds, poles.y,
                         poles.z, conductivity.<name>, experiment, forward,
                         output
    key = value          scalar (int/float/string) or whitespace-separated
                         typed array, e.g. `heights = 0 -0.5 -1`

Unknown sections or keys are rejected, duplicate keys are parse errors,
and configurations round-trip through serialize -> parse identically
(sections and keys are emitted in canonical order, floats with 17
significant digits).
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .conductivity import AffinePatch, Conductivity, MatrixFieldSpec
from .errors import GeometryError, ParseError, ValidationError
from .geometry import build_layered_geometry

_GEOMETRY_KEYS = {"r0": ("float", 1), "lipschitz": ("float", 1),
                  "heights": ("floats", None),
                  "sigma_patch": ("floats", 4), "d0_box": ("floats", 6)}
_MESH_KEYS = {"resolution": ("int", 1)}
_BOUNDS_KEYS = {"gamma_bar": ("float", 1), "lambda": ("float", 1),
                "a_bar": ("float", 1)}
_POLES_KEYS = {"box": ("floats", 6), "per_axis": ("int", 1)}
_EXPERIMENT_KEYS = {"seed": ("int", 1), "n_pairs": ("int", 1),
                    "t_grid": ("floats", None), "radii": ("floats", None),
                    "k": ("int", 1), "r": ("float", 1),
                    "max_iter": ("int", 1), "tol": ("float", 1),
                    "conductivity_true": ("str", 1),
                    "conductivity_init": ("str", 1),
                    "delta_patch": ("floats", None)}
_FORWARD_KEYS = {"g_affine": ("floats", 4), "conductivity": ("str", 1)}
_OUTPUT_KEYS = {"formats": ("strs", None)}

_DEFAULTS = {"resolution": 6, "per_axis": 2, "gamma_bar": 5.0,
             "lambda": 5.0, "a_bar": 5.0, "lipschitz": 1.0}


@dataclass
class RunConfig:
    """Validated run configuration; geometry is pre-built, conductivities
    are keyed by their section name."""

    spec: object
    resolution: int
    bounds: dict
    conductivities: dict
    dy_box: tuple
    dz_box: tuple
    per_axis: int
    experiment: dict
    forward: dict
    output_formats: tuple
    raw: dict = dc_field(repr=False, default_factory=dict)


def _tokenize(path_or_text, from_text=False):
    if from_text:
        lines = path_or_text.splitlines()
    else:
        with open(path_or_text, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    section = None
    out = {}
    for ln, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ParseError(f"line {ln}: malformed section header")
            section = body[1:-1].strip()
            if not section:
                raise ParseError(f"line {ln}: empty section name")
            if section in out:
                raise ParseError(f"line {ln}: duplicate section "
                                 f"[{section}]")
            out[section] = {}
            continue
        if "=" not in body:
            raise ParseError(f"line {ln}: expected key = value")
        if section is None:
            raise ParseError(f"line {ln}: key outside any section")
        key, val = body.split("=", 1)
        key = key.strip()
        if key in out[section]:
            raise ParseError(f"line {ln}: duplicate key {key!r} in "
                             f"[{section}]")
        out[section][key] = (val.strip(), ln)
    return out


def _take(sections, name, schema, required=()):
    raw = sections.pop(name, {})
    out = {}
    for key, (val, ln) in raw.items():
        if key not in schema:
            raise ValidationError(f"line {ln}: unknown key {key!r} in "
                                  f"[{name}]")
        kind, arity = schema[key]
        out[key] = _convert(val, ln, kind, arity)
    for key in required:
        if key not in out:
            raise ValidationError(f"[{name}] is missing required key "
                                  f"{key!r}")
    return out


def _convert(value, ln, kind, arity, key="value"):
    toks = value.split()
    if kind == "str":
        if len(toks) != 1:
            raise ParseError(f"line {ln}: {key} expects one token")
        return toks[0]
    if kind == "strs":
        return tuple(toks)
    try:
        if kind == "int":
            if len(toks) != 1:
                raise ParseError(f"line {ln}: {key} expects one integer")
            return int(toks[0])
        if kind == "float":
            if len(toks) != 1:
                raise ParseError(f"line {ln}: {key} expects one number")
            return float(toks[0])
        vals = tuple(float(t) for t in toks)
    except ValueError as exc:
        raise ParseError(f"line {ln}: bad number in {key}: {exc}") from exc
    if arity is not None and len(vals) != arity:
        raise ParseError(f"line {ln}: {key} expects {arity} numbers, got "
                         f"{len(vals)}")
    return vals


def _conductivity_from_section(name, body, n_layers, a_bar):
    kind = "constant"
    a0 = np.eye(3).ravel()
    a1 = {}
    patches = {}
    for key, (val, ln) in body.items():
        if key == "field":
            kind = _convert(val, ln, "str", 1, key)
        elif key == "a0":
            a0 = np.asarray(_convert(val, ln, "floats", 9, key))
        elif key in ("a1_x", "a1_y", "a1_z"):
            a1[key] = np.asarray(_convert(val, ln, "floats", 9, key))
        elif key.startswith("patch"):
            try:
                m = int(key[len("patch"):])
            except ValueError:
                raise ValidationError(f"line {ln}: bad patch key {key!r}")
            vals = _convert(val, ln, "floats", 4, key)
            if not 1 <= m <= n_layers:
                raise ValidationError(
                    f"line {ln}: patch index {m} outside 1..{n_layers}")
            patches[m] = AffinePatch(m, vals[0], vals[1:])
        else:
            raise ValidationError(f"line {ln}: unknown key {key!r} in "
                                  f"[{name}]")
    missing = sorted(set(range(1, n_layers + 1)) - set(patches))
    if missing:
        raise ValidationError(f"[{name}] missing patches {missing}")
    if kind == "affine":
        mats = tuple(a1.get(k, np.zeros(9)).reshape(3, 3)
                     for k in ("a1_x", "a1_y", "a1_z"))
        fld = MatrixFieldSpec(kind="affine", A0=a0.reshape(3, 3), A1=mats,
                              A_bar=a_bar)
    elif kind == "constant":
        if a1:
            raise ValidationError(f"[{name}]: a1_* keys need field=affine")
        fld = MatrixFieldSpec(kind="constant", A0=a0.reshape(3, 3),
                              A_bar=a_bar)
    else:
        raise ValidationError(f"[{name}]: unknown field kind {kind!r}")
    return Conductivity(patches=tuple(patches[m]
                                      for m in sorted(patches)),
                        a_field=fld)


def load_config(path, from_text=False):
    """Parse and validate a run configuration (strict mode)."""
    sections = _tokenize(path, from_text=from_text)
    raw_echo = {s: {k: v for k, (v, _) in body.items()}
                for s, body in sections.items()}

    geo = _take(sections, "geometry", _GEOMETRY_KEYS,
                required=("r0", "heights", "sigma_patch", "d0_box"))
    mesh = _take(sections, "mesh", _MESH_KEYS)
    bounds = _take(sections, "bounds", _BOUNDS_KEYS)
    poles_y = _take(sections, "poles.y", _POLES_KEYS)
    poles_z = _take(sections, "poles.z", _POLES_KEYS)
    experiment = _take(sections, "experiment", _EXPERIMENT_KEYS)
    forward = _take(sections, "forward", _FORWARD_KEYS)
    output = _take(sections, "output", _OUTPUT_KEYS)

    conductivities = {}
    for name in [s for s in list(sections) if s.startswith("conductivity.")]:
        body = sections.pop(name)
        short = name[len("conductivity."):]
        if not short:
            raise ValidationError(f"empty conductivity name in [{name}]")
        conductivities[short] = (name, body)
    if sections:
        raise ValidationError(f"unknown sections: {sorted(sections)}")

    heights = geo["heights"]
    try:
        spec = build_layered_geometry(
            r0=geo["r0"], n_layers=len(heights) - 1, heights=heights,
            sigma_patch=geo["sigma_patch"], d0_box=geo["d0_box"],
            lipschitz=geo.get("lipschitz", _DEFAULTS["lipschitz"]))
    except GeometryError as exc:
        raise ValidationError(f"[geometry]: {exc}") from exc

    bounds_full = {"gamma_bar": bounds.get("gamma_bar",
                                           _DEFAULTS["gamma_bar"]),
                   "lambda": bounds.get("lambda", _DEFAULTS["lambda"]),
                   "a_bar": bounds.get("a_bar", _DEFAULTS["a_bar"])}

    conds = {short: _conductivity_from_section(
        full, body, spec.n_layers, bounds_full["a_bar"])
        for short, (full, body) in conductivities.items()}

    d = spec.d0_box
    shrink = 0.12 * min(d[1] - d[0], d[3] - d[2], d[5] - d[4])
    default_y = (d[0] + shrink, 0.5 * (d[0] + d[1]) - shrink / 4,
                 d[2] + shrink, d[3] - shrink,
                 d[4] + shrink, d[5] - shrink)
    default_z = (0.5 * (d[0] + d[1]) + shrink / 4, d[1] - shrink,
                 d[2] + shrink, d[3] - shrink,
                 d[4] + shrink, d[5] - shrink)

    return RunConfig(
        spec=spec,
        resolution=mesh.get("resolution", _DEFAULTS["resolution"]),
        bounds=bounds_full,
        conductivities=conds,
        dy_box=tuple(poles_y.get("box", default_y)),
        dz_box=tuple(poles_z.get("box", default_z)),
        per_axis=poles_y.get("per_axis",
                             poles_z.get("per_axis",
                                         _DEFAULTS["per_axis"])),
        experiment=experiment,
        forward=forward,
        output_formats=output.get("formats", ("json",)),
        raw=raw_echo,
    )


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def serialize_config(cfg):
    """Canonical text for a RunConfig; parse(serialize(cfg)) round-trips."""
    spec = cfg.spec
    lines = ["[geometry]",
             f"r0 = {_fmt(spec.r0)}",
             f"lipschitz = {_fmt(spec.lipschitz)}",
             "heights = " + " ".join(_fmt(h) for h in spec.heights),
             "sigma_patch = " + " ".join(_fmt(v) for v in spec.sigma_patch),
             "d0_box = " + " ".join(_fmt(v) for v in spec.d0_box),
             "",
             "[mesh]",
             f"resolution = {cfg.resolution}",
             "",
             "[bounds]",
             f"gamma_bar = {_fmt(cfg.bounds['gamma_bar'])}",
             f"lambda = {_fmt(cfg.bounds['lambda'])}",
             f"a_bar = {_fmt(cfg.bounds['a_bar'])}"]
    for name in sorted(cfg.conductivities):
        c = cfg.conductivities[name]
        lines += ["", f"[conductivity.{name}]",
                  f"field = {c.a_field.kind}",
                  "a0 = " + " ".join(_fmt(v)
                                     for v in c.a_field.A0.ravel())]
        if c.a_field.kind == "affine":
            for label, M in zip(("a1_x", "a1_y", "a1_z"), c.a_field.A1):
                lines.append(f"{label} = "
                             + " ".join(_fmt(v) for v in M.ravel()))
        for p in c.patches:
            lines.append(f"patch{p.m} = {_fmt(p.s)} "
                         + " ".join(_fmt(v) for v in p.S))
    lines += ["", "[poles.y]",
              "box = " + " ".join(_fmt(v) for v in cfg.dy_box),
              f"per_axis = {cfg.per_axis}",
              "", "[poles.z]",
              "box = " + " ".join(_fmt(v) for v in cfg.dz_box),
              f"per_axis = {cfg.per_axis}"]
    if cfg.experiment:
        lines += ["", "[experiment]"]
        for key in sorted(cfg.experiment):
            val = cfg.experiment[key]
            if isinstance(val, tuple):
                lines.append(f"{key} = " + " ".join(_fmt(v) for v in val))
            else:
                lines.append(f"{key} = {_fmt(val)}")
    if cfg.forward:
        lines += ["", "[forward]"]
        for key in sorted(cfg.forward):
            val = cfg.forward[key]
            if isinstance(val, tuple):
                lines.append(f"{key} = " + " ".join(_fmt(v) for v in val))
            else:
                lines.append(f"{key} = {_fmt(val)}")
    lines += ["", "[output]",
              "formats = " + " ".join(cfg.output_formats), ""]
    return "\n".join(lines)

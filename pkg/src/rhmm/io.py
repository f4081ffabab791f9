"""JSON model files and CSV observation files.

Model JSON::

    {"family": "disk_gaussian", "states": 3, "P": [[...]], "pi1": [...],
     "emissions": [{"ybar": <point>, "sigma": s}, ...]}

Fitted models add ``loglik_trace``, ``iterations`` and ``flags``. Field
models replace ``P``/``pi1`` with ``grid: [w, h]``, ``V`` and ``J``.
Points use the manifold's JSON form (disk ``{"re", "im"}``, sphere a list,
SPD nested lists). Floats are written in shortest round-trip form, so a
file read back reproduces the parameters bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from rhmm.errors import ManifoldMismatchError
from rhmm.geometry.families import LocationScaleFamily, family_from_name
from rhmm.hmm import HmmParams
from rhmm.mrf import FieldParams, GridGraph


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = str(path) if path is not None else "<input>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


# -- models -----------------------------------------------------------------

def _family_for(name: str, ybar0) -> LocationScaleFamily:
    if name == "disk_gaussian":
        return family_from_name(name)
    dim = len(ybar0) if name == "vmf" else np.asarray(ybar0).shape[0]
    return family_from_name(name, dim)


def _emissions_to_json(family, locations, sigmas):
    m = family.manifold
    return [{"ybar": m.to_json(y), "sigma": float(s)} for y, s in zip(locations, sigmas)]


def _emissions_from_json(obj, path):
    try:
        em = obj["emissions"]
        family = _family_for(obj["family"], em[0]["ybar"])
        locs = np.stack([family.manifold.from_json(e["ybar"]) for e in em])
        sigmas = np.array([float(e["sigma"]) for e in em])
    except (KeyError, IndexError, TypeError, ValueError, ManifoldMismatchError) as exc:
        raise ParseError(f"bad emissions block: {exc}", path) from exc
    if "states" in obj and int(obj["states"]) != len(em):
        raise ParseError(f"'states' is {obj['states']} but {len(em)} emissions given", path)
    return family, locs, sigmas


def model_to_json(params: HmmParams, **extra) -> dict:
    out = {"family": params.family.name, "states": params.n_states,
           "P": params.P.tolist(), "pi1": params.pi1.tolist(),
           "emissions": _emissions_to_json(params.family, params.locations, params.sigmas)}
    out.update(extra)
    return out


def model_from_json(obj: dict, path=None) -> HmmParams:
    family, locs, sigmas = _emissions_from_json(obj, path)
    try:
        return HmmParams(obj["P"], obj["pi1"], locs, sigmas, family)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid model: {exc}", path) from exc


def field_to_json(field: FieldParams, grid: GridGraph, **extra) -> dict:
    out = {"family": field.family.name, "states": field.n_states,
           "grid": [grid.width, grid.height], "V": field.V.tolist(), "J": field.J.tolist(),
           "emissions": _emissions_to_json(field.family, field.locations, field.sigmas)}
    out.update(extra)
    return out


def field_from_json(obj: dict, path=None) -> tuple[FieldParams, GridGraph]:
    family, locs, sigmas = _emissions_from_json(obj, path)
    try:
        grid = GridGraph(*[int(v) for v in obj["grid"]])
        return FieldParams(obj["V"], obj["J"], locs, sigmas, family), grid
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid field model: {exc}", path) from exc


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from exc


def write_json(obj: dict, path) -> None:
    # json emits floats with repr, which is the shortest round-trip form
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_model(path) -> HmmParams:
    return model_from_json(read_json(path), path)


def save_model(params: HmmParams, path, **extra) -> None:
    write_json(model_to_json(params, **extra), path)


# -- observations -----------------------------------------------------------

def write_observations(path, manifold, obs, states=None, grid: GridGraph | None = None) -> None:
    """Header row, then ``t`` (or ``x, y`` for fields), optional ``state``, coordinates."""
    coords = manifold.to_coords(obs)
    index = ["x", "y"] if grid is not None else ["t"]
    header = index + (["state"] if states is not None else []) + manifold.coord_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, c in enumerate(coords):
            row = list(grid.coords(i)) if grid is not None else [i]
            if states is not None:
                row.append(int(states[i]))
            w.writerow(row + [_fmt(v) for v in c])


def read_observations(path, manifold):
    """Returns ``(obs, states or None, index)``; index is ``t`` or ``(x, y)`` rows.

    Field files are reordered into row-major site order.
    """
    names = manifold.coord_names()
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path, 1)
        header = [h.strip() for h in header]
        missing = [n for n in names if n not in header]
        is_field = "x" in header and "y" in header
        if missing or not (is_field or "t" in header):
            need = names + (["t"] if not is_field else [])
            raise ParseError(f"header must contain {need}, got {header}", path, 1)
        col = {h: i for i, h in enumerate(header)}
        index, states, coords = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
            try:
                index.append((int(row[col["x"]]), int(row[col["y"]])) if is_field
                             else int(row[col["t"]]))
                if "state" in col:
                    states.append(int(row[col["state"]]))
                coords.append([float(row[col[n]]) for n in names])
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from exc
            try:
                manifold.validate(manifold.from_coords(np.array(coords[-1])))
            except (ValueError, ManifoldMismatchError) as exc:
                raise ParseError(f"point not on the {manifold.kind}: {exc}", path, line) from exc
    if not coords:
        raise ParseError("no observations", path, 2)
    obs = manifold.from_coords(np.array(coords))
    st = np.array(states) if states else None
    if is_field:
        w = max(x for x, _ in index) + 1
        order = np.argsort([y * w + x for x, y in index], kind="stable")
        obs = obs[order]
        st = st[order] if st is not None else None
        index = [index[i] for i in order]
    return obs, st, index

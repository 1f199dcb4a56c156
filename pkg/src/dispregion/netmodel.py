"""Distribution-network case model: parsing, validation, normalization.

A case is a radial (tree) network in per-unit: buses with loads and
voltage bounds, directed lines with impedances and flow caps, conventional
generators with capacity and reschedule (ramp) limits, and renewable units
(RPG) whose active output is uncertain.  All quantities are per-unit on
the case bases; voltages and current magnitudes are stored squared.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

# Reactive proportionality for a 0.95 power factor unit, tan(acos(0.95)).
DEFAULT_MU = math.tan(math.acos(0.95))
# Reschedule limit as a fraction of active capacity when not given explicitly.
DEFAULT_RAMP_FRACTION = 0.25
DEFAULT_BASE_MVA = 1.0
DEFAULT_BASE_KV = 10.0
DEFAULT_V_ROOT = 1.0


class CaseError(ValueError):
    """Malformed case content (syntax or invariant violation)."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", field {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0
    q_load: float = 0.0
    v_min: float = 0.81
    v_max: float = 1.21
    is_root: bool = False


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    l_max: float
    s_max: float

    @property
    def name(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Generator:
    bus: int
    p_set: float
    q_set: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_p: float | None = None

    @property
    def ramp(self) -> float:
        if self.ramp_p is not None:
            return self.ramp_p
        return DEFAULT_RAMP_FRACTION * self.p_max


@dataclass(frozen=True)
class RpgUnit:
    bus: int
    w_forecast: float
    w_cap: float
    mu: float = DEFAULT_MU


@dataclass(frozen=True)
class NetworkCase:
    name: str
    base_mva: float
    base_kv: float
    v_root: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    rpg_units: tuple[RpgUnit, ...]

    def bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @property
    def root(self) -> Bus:
        for b in self.buses:
            if b.is_root:
                return b
        raise CaseError("case has no root bus")

    def children(self) -> dict[int, list[Line]]:
        out: dict[int, list[Line]] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            out.setdefault(ln.from_bus, []).append(ln)
        return out

    def parent_line(self) -> dict[int, Line]:
        return {ln.to_bus: ln for ln in self.lines}


@dataclass
class ValidationReport:
    entries: list[tuple[str, str]] = field(default_factory=list)

    def add(self, code: str, message: str) -> None:
        self.entries.append((code, message))

    @property
    def ok(self) -> bool:
        return not self.entries

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(f"[{c}] {m}" for c, m in self.entries)


def validate(case: NetworkCase) -> ValidationReport:
    """Collect every violated case invariant; empty report means well-formed."""
    rep = ValidationReport()
    ids = [b.id for b in case.buses]
    seen: set[int] = set()
    for i in ids:
        if i in seen:
            rep.add("duplicate-bus", f"bus id {i} appears more than once")
        seen.add(i)
    roots = [b for b in case.buses if b.is_root]
    if len(roots) != 1:
        rep.add("root-count", f"expected exactly one root bus, found {len(roots)}")
    for b in case.buses:
        if not (b.v_min <= b.v_max):
            rep.add("bound-order", f"bus {b.id}: v_min {b.v_min} > v_max {b.v_max}")
        if b.v_min <= 0:
            rep.add("bound-sign", f"bus {b.id}: v_min must be positive")
        for val, what in ((b.p_load, "p_load"), (b.q_load, "q_load")):
            if not math.isfinite(val) or val < 0:
                rep.add("load-range", f"bus {b.id}: {what} must be finite and >= 0")
    known = set(ids)
    for ln in case.lines:
        if ln.from_bus not in known or ln.to_bus not in known:
            rep.add("unknown-bus", f"line {ln.name} references an unknown bus")
        if ln.r < 0 or ln.x <= 0:
            rep.add("impedance", f"line {ln.name}: need r >= 0 and x > 0")
        if not ln.l_max > 0:
            rep.add("line-cap", f"line {ln.name}: l_max must be > 0")
        if not ln.s_max > 0:
            rep.add("line-cap", f"line {ln.name}: s_max must be > 0")
    for g in case.generators:
        if g.bus not in known:
            rep.add("unknown-bus", f"generator at bus {g.bus}: unknown bus")
        if not (g.p_min <= g.p_set <= g.p_max):
            rep.add("gen-bounds", f"generator at bus {g.bus}: p_set outside [p_min, p_max]")
        if not (g.q_min <= g.q_set <= g.q_max):
            rep.add("gen-bounds", f"generator at bus {g.bus}: q_set outside [q_min, q_max]")
        if g.ramp < 0:
            rep.add("gen-bounds", f"generator at bus {g.bus}: ramp_p must be >= 0")
    for u in case.rpg_units:
        if u.bus not in known:
            rep.add("unknown-bus", f"RPG unit at bus {u.bus}: unknown bus")
        if not (0 <= u.w_forecast <= u.w_cap):
            rep.add("rpg-bounds", f"RPG unit at bus {u.bus}: need 0 <= w_forecast <= w_cap")
        if u.mu < 0:
            rep.add("rpg-bounds", f"RPG unit at bus {u.bus}: mu must be >= 0")
    # radiality: every non-root bus has exactly one parent, no cycles,
    # everything reachable from the root
    if len(roots) == 1:
        parent: dict[int, Line] = {}
        for ln in case.lines:
            if ln.to_bus in parent:
                rep.add("radiality", f"line {ln.name} gives bus {ln.to_bus} a second parent")
            elif ln.to_bus == roots[0].id:
                rep.add("radiality", f"line {ln.name} is directed into the root bus")
            else:
                parent[ln.to_bus] = ln
        children = {b.id: [] for b in case.buses}
        for ln in case.lines:
            if ln.from_bus in children:
                children[ln.from_bus].append(ln.to_bus)
        reached = set()
        stack = [roots[0].id]
        while stack:
            j = stack.pop()
            if j in reached:
                rep.add("radiality", f"cycle detected through bus {j}")
                break
            reached.add(j)
            stack.extend(children.get(j, []))
        for b in case.buses:
            if b.id not in reached:
                rep.add("unreachable", f"unreachable bus {b.id}")
    return rep


def scale_impedances(case: NetworkCase, factor: float) -> NetworkCase:
    """Scale every line's r and x by a common factor (r/x ratios preserved)."""
    if not factor > 0:
        raise ValueError(f"impedance scale factor must be > 0, got {factor}")
    lines = tuple(replace(ln, r=ln.r * factor, x=ln.x * factor) for ln in case.lines)
    return replace(case, lines=lines)


# ---------------------------------------------------------------------------
# native case format
#
# Line-oriented sections [meta], [bus], [line], [gen], [rpg]; one record per
# line, whitespace-separated columns, '#' starts a comment, '-' means "use
# the default" for optional trailing fields.

_SECTIONS = ("meta", "bus", "line", "gen", "rpg")


def _num(tok: str, lineno: int, col: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CaseError(f"expected a number, got {tok!r}", lineno, col) from None


def _int(tok: str, lineno: int, col: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseError(f"expected an integer, got {tok!r}", lineno, col) from None


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse a native case document into a validated NetworkCase."""
    meta: dict[str, str] = {}
    buses: list[Bus] = []
    lines: list[Line] = []
    gens: list[Generator] = []
    rpgs: list[RpgUnit] = []
    section = None
    present: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        m = re.fullmatch(r"\[(\w+)\]", content)
        if m:
            section = m.group(1)
            if section not in _SECTIONS:
                raise CaseError(f"unknown section [{section}]", lineno)
            present.add(section)
            continue
        if section is None:
            raise CaseError("record before any section header", lineno)
        toks = content.split()
        if section == "meta":
            if len(toks) != 2:
                raise CaseError("meta records are 'key value'", lineno)
            meta[toks[0]] = toks[1]
        elif section == "bus":
            if len(toks) != 6:
                raise CaseError("bus record needs 6 fields: id p_load q_load v_min v_max is_root", lineno)
            buses.append(Bus(
                id=_int(toks[0], lineno, 1),
                p_load=_num(toks[1], lineno, 2),
                q_load=_num(toks[2], lineno, 3),
                v_min=_num(toks[3], lineno, 4),
                v_max=_num(toks[4], lineno, 5),
                is_root=bool(_int(toks[5], lineno, 6)),
            ))
        elif section == "line":
            if len(toks) != 6:
                raise CaseError("line record needs 6 fields: from to r x l_max s_max", lineno)
            lines.append(Line(
                from_bus=_int(toks[0], lineno, 1),
                to_bus=_int(toks[1], lineno, 2),
                r=_num(toks[2], lineno, 3),
                x=_num(toks[3], lineno, 4),
                l_max=_num(toks[4], lineno, 5),
                s_max=_num(toks[5], lineno, 6),
            ))
        elif section == "gen":
            if len(toks) != 8:
                raise CaseError("gen record needs 8 fields: bus p_set q_set p_min p_max q_min q_max ramp_p", lineno)
            ramp = None if toks[7] == "-" else _num(toks[7], lineno, 8)
            gens.append(Generator(
                bus=_int(toks[0], lineno, 1),
                p_set=_num(toks[1], lineno, 2),
                q_set=_num(toks[2], lineno, 3),
                p_min=_num(toks[3], lineno, 4),
                p_max=_num(toks[4], lineno, 5),
                q_min=_num(toks[5], lineno, 6),
                q_max=_num(toks[6], lineno, 7),
                ramp_p=ramp,
            ))
        elif section == "rpg":
            if len(toks) != 4:
                raise CaseError("rpg record needs 4 fields: bus w_forecast w_cap mu", lineno)
            mu = DEFAULT_MU if toks[3] == "-" else _num(toks[3], lineno, 4)
            rpgs.append(RpgUnit(
                bus=_int(toks[0], lineno, 1),
                w_forecast=_num(toks[1], lineno, 2),
                w_cap=_num(toks[2], lineno, 3),
                mu=mu,
            ))
    for required in ("bus", "line", "gen"):
        if required not in present:
            raise CaseError(f"missing required section [{required}]")
    case = NetworkCase(
        name=meta.get("name", name),
        base_mva=float(meta.get("base_mva", DEFAULT_BASE_MVA)),
        base_kv=float(meta.get("base_kv", DEFAULT_BASE_KV)),
        v_root=float(meta.get("v_root", DEFAULT_V_ROOT)),
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(gens),
        rpg_units=tuple(rpgs),
    )
    rep = validate(case)
    if not rep.ok:
        raise CaseError(f"invalid case:\n{rep}")
    return case


def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_case(case: NetworkCase) -> str:
    """Render a NetworkCase back into the native format (parse round-trips)."""
    out: list[str] = ["[meta]"]
    out.append(f"name {case.name}")
    out.append(f"base_mva {_fmt(case.base_mva)}")
    out.append(f"base_kv {_fmt(case.base_kv)}")
    out.append(f"v_root {_fmt(case.v_root)}")
    out.append("")
    out.append("[bus]")
    out.append("# id p_load q_load v_min v_max is_root")
    for b in case.buses:
        out.append(f"{b.id} {_fmt(b.p_load)} {_fmt(b.q_load)} {_fmt(b.v_min)} {_fmt(b.v_max)} {int(b.is_root)}")
    out.append("")
    out.append("[line]")
    out.append("# from to r x l_max s_max")
    for ln in case.lines:
        out.append(f"{ln.from_bus} {ln.to_bus} {_fmt(ln.r)} {_fmt(ln.x)} {_fmt(ln.l_max)} {_fmt(ln.s_max)}")
    out.append("")
    out.append("[gen]")
    out.append("# bus p_set q_set p_min p_max q_min q_max ramp_p")
    for g in case.generators:
        ramp = "-" if g.ramp_p is None else _fmt(g.ramp_p)
        out.append(f"{g.bus} {_fmt(g.p_set)} {_fmt(g.q_set)} {_fmt(g.p_min)} {_fmt(g.p_max)} "
                   f"{_fmt(g.q_min)} {_fmt(g.q_max)} {ramp}")
    out.append("")
    out.append("[rpg]")
    out.append("# bus w_forecast w_cap mu")
    for u in case.rpg_units:
        out.append(f"{u.bus} {_fmt(u.w_forecast)} {_fmt(u.w_cap)} {_fmt(u.mu)}")
    out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# MATPOWER-style import (mpc.bus / mpc.branch / mpc.gen matrix subset)

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([0-9.eE+-]+)\s*;")


def _parse_matrix(body: str) -> list[list[float]]:
    rows: list[list[float]] = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.split("%", 1)[0].strip()
        if not chunk:
            continue
        try:
            rows.append([float(t) for t in chunk.split()])
        except ValueError as exc:
            bad = next(t for t in chunk.split() if not _is_float(t))
            raise CaseError(f"unsupported construct in matrix row: token {bad!r}") from exc
    return rows


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def import_matpower(text: str, rpg_annotations: str = "", name: str = "imported") -> NetworkCase:
    """Build a NetworkCase from a MATPOWER-style case script.

    The script supplies bus, branch and gen matrices plus baseMVA; fields the
    dialect lacks (RPG units, ramp limits, bases) come from the sidecar, which
    uses the native [meta]/[rpg] section syntax.
    """
    matrices = {m.group(1): _parse_matrix(m.group(2)) for m in _MATRIX_RE.finditer(text)}
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR_RE.finditer(text)}
    for required in ("bus", "branch", "gen"):
        if required not in matrices:
            raise CaseError(f"missing required matrix mpc.{required}")
    base_mva_src = scalars.get("baseMVA", 100.0)

    side_meta: dict[str, str] = {}
    rpgs: list[RpgUnit] = []
    if rpg_annotations.strip():
        side = parse_sidecar(rpg_annotations)
        side_meta = side[0]
        rpgs = side[1]

    bus_rows = matrices["bus"]
    if not bus_rows:
        raise CaseError("empty bus matrix")
    kv_src = bus_rows[0][9] if len(bus_rows[0]) > 9 and bus_rows[0][9] > 0 else DEFAULT_BASE_KV
    base_mva = float(side_meta.get("base_mva", DEFAULT_BASE_MVA))
    base_kv = float(side_meta.get("base_kv", kv_src))
    v_root = float(side_meta.get("v_root", DEFAULT_V_ROOT))
    # per-unit conversion factors from the source bases onto the case bases
    p_scale = base_mva_src / base_mva          # for quantities stored in source p.u.
    z_scale = (kv_src**2 / base_mva_src) / (base_kv**2 / base_mva)

    buses: list[Bus] = []
    for i, row in enumerate(bus_rows):
        if len(row) < 13:
            raise CaseError(f"bus matrix row {i + 1}: expected 13 columns, got {len(row)}")
        buses.append(Bus(
            id=int(row[0]),
            p_load=row[2] / base_mva,
            q_load=max(row[3], 0.0) / base_mva,
            v_min=row[12] ** 2,
            v_max=row[11] ** 2,
            is_root=int(row[1]) == 3,
        ))
    vmin_floor = min(b.v_min for b in buses)

    lines: list[Line] = []
    for i, row in enumerate(matrices["branch"]):
        if len(row) < 11:
            raise CaseError(f"branch matrix row {i + 1}: expected >= 11 columns, got {len(row)}")
        if int(row[10]) == 0:
            continue
        if len(row) > 8 and row[8] not in (0.0, 1.0):
            raise CaseError(f"unsupported construct: transformer tap {row[8]!r} in branch row {i + 1}")
        rate_a = row[5]
        s_max = rate_a / base_mva if rate_a > 0 else math.inf
        l_max = 1.25 * s_max**2 / vmin_floor if math.isfinite(s_max) else math.inf
        lines.append(Line(
            from_bus=int(row[0]),
            to_bus=int(row[1]),
            r=row[2] * z_scale,
            x=row[3] * z_scale,
            l_max=l_max,
            s_max=s_max,
        ))

    gen_rows = matrices["gen"]
    if not gen_rows:
        raise CaseError("no generators in gen matrix")
    gens: list[Generator] = []
    for i, row in enumerate(gen_rows):
        if len(row) < 10:
            raise CaseError(f"gen matrix row {i + 1}: expected >= 10 columns, got {len(row)}")
        if len(row) > 7 and row[7] == 0:
            continue
        p_min, p_max = row[9] / base_mva, row[8] / base_mva
        if p_min > p_max:
            raise CaseError(f"gen matrix row {i + 1}: PMIN > PMAX")
        q_min, q_max = row[4] / base_mva, row[3] / base_mva
        if q_min > q_max:
            raise CaseError(f"gen matrix row {i + 1}: QMIN > QMAX")
        gens.append(Generator(
            bus=int(row[0]),
            p_set=min(max(row[1] / base_mva, p_min), p_max),
            q_set=min(max(row[2] / base_mva, q_min), q_max),
            p_min=p_min,
            p_max=p_max,
            q_min=q_min,
            q_max=q_max,
        ))
    if not gens:
        raise CaseError("no generators in gen matrix")

    case = NetworkCase(
        name=side_meta.get("name", name),
        base_mva=base_mva,
        base_kv=base_kv,
        v_root=v_root,
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(gens),
        rpg_units=tuple(rpgs),
    )
    rep = validate(case)
    if not rep.ok:
        raise CaseError(f"invalid imported case:\n{rep}")
    return case


def parse_sidecar(text: str) -> tuple[dict[str, str], list[RpgUnit]]:
    """Parse a sidecar document holding [meta] overrides and [rpg] records."""
    meta: dict[str, str] = {}
    rpgs: list[RpgUnit] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        m = re.fullmatch(r"\[(\w+)\]", content)
        if m:
            section = m.group(1)
            if section not in ("meta", "rpg"):
                raise CaseError(f"unknown sidecar section [{section}]", lineno)
            continue
        toks = content.split()
        if section == "meta":
            if len(toks) != 2:
                raise CaseError("meta records are 'key value'", lineno)
            meta[toks[0]] = toks[1]
        elif section == "rpg":
            if len(toks) != 4:
                raise CaseError("rpg record needs 4 fields: bus w_forecast w_cap mu", lineno)
            mu = DEFAULT_MU if toks[3] == "-" else _num(toks[3], lineno, 4)
            rpgs.append(RpgUnit(
                bus=_int(toks[0], lineno, 1),
                w_forecast=_num(toks[1], lineno, 2),
                w_cap=_num(toks[2], lineno, 3),
                mu=mu,
            ))
        else:
            raise CaseError("record before any section header", lineno)
    return meta, rpgs

"""CPLEX-LP and free-MPS serialization with deterministic ordering."""

from __future__ import annotations

from typing import Dict, Iterable, List, Tuple

from .model import BINARY, EQ, GE, LE, MilpModel

TERMS_PER_LINE = 8


def fmt(x: float) -> str:
    s = f"{x:.12g}"
    return "0" if s == "-0" else s


def _lp_terms(model: MilpModel, terms: Iterable[Tuple[int, float]]) -> List[str]:
    out = []
    for v, c in terms:
        sign = "-" if c < 0 else "+"
        out.append(f"{sign} {fmt(abs(c))} {model.variables[v].name}")
    return out


def _wrap(head: str, pieces: List[str], tail: str = "") -> List[str]:
    lines = []
    for k in range(0, max(len(pieces), 1), TERMS_PER_LINE):
        chunk = " ".join(pieces[k:k + TERMS_PER_LINE])
        lines.append((head if k == 0 else "   ") + " " + chunk if chunk else head)
    if tail:
        lines[-1] += " " + tail
    return lines


def emit_lp(model: MilpModel) -> str:
    lines = [f"\\ Problem: {model.name}", "Minimize"]
    obj = sorted(model.objective.items())
    if obj:
        lines += _wrap(" obj:", _lp_terms(model, obj))
    else:
        lines.append(" obj: 0 " + model.variables[0].name)
    lines.append("Subject To")
    for row in model.constraints:
        if not row.terms:
            continue
        sense = {LE: "<=", GE: ">=", EQ: "="}[row.sense]
        lines += _wrap(f" {row.name}:", _lp_terms(model, row.terms), f"{sense} {fmt(row.rhs)}")
    lines.append("Bounds")
    for var in model.variables:
        if var.kind == BINARY and not var.is_fixed:
            continue
        if var.is_fixed:
            lines.append(f" {var.name} = {fmt(var.lower)}")
        else:
            lines.append(f" {fmt(var.lower)} <= {var.name} <= {fmt(var.upper)}")
    binaries = [v.name for v in model.variables if v.kind == BINARY]
    if binaries:
        lines.append("Binaries")
        for k in range(0, len(binaries), TERMS_PER_LINE):
            lines.append(" " + " ".join(binaries[k:k + TERMS_PER_LINE]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def emit_mps(model: MilpModel) -> str:
    rows = [r for r in model.constraints if r.terms]
    columns: Dict[int, List[Tuple[str, float]]] = {v.id: [] for v in model.variables}
    for v, c in sorted(model.objective.items()):
        columns[v].append(("obj", c))
    for row in rows:
        for v, c in row.terms:
            columns[v].append((row.name, c))

    lines = [f"NAME {model.name}", "ROWS", " N obj"]
    for row in rows:
        lines.append(f" {dict([(LE, 'L'), (GE, 'G'), (EQ, 'E')])[row.sense]} {row.name}")
    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for var in model.variables:
        is_int = var.kind == BINARY
        if is_int != in_int:
            tag = "'INTORG'" if is_int else "'INTEND'"
            lines.append(f" MARKER{marker} 'MARKER' {tag}")
            marker += 1
            in_int = is_int
        entries = columns[var.id] or [("obj", 0.0)]
        for rname, c in entries:
            lines.append(f" {var.name} {rname} {fmt(c)}")
    if in_int:
        lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
    lines.append("RHS")
    for row in rows:
        if row.rhs != 0.0:
            lines.append(f" RHS {row.name} {fmt(row.rhs)}")
    lines.append("BOUNDS")
    for var in model.variables:
        if var.is_fixed:
            lines.append(f" FX BND {var.name} {fmt(var.lower)}")
        else:
            if var.lower != 0.0:
                lines.append(f" LO BND {var.name} {fmt(var.lower)}")
            lines.append(f" UP BND {var.name} {fmt(var.upper)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def write_model(model: MilpModel, path, fmt_name: str = "lp") -> None:
    text = emit_lp(model) if fmt_name == "lp" else emit_mps(model)
    with open(path, "w") as fh:
        fh.write(text)


def lp_variable_names(text: str) -> List[str]:
    """Variable names declared in an LP text (Bounds and Binaries sections)."""
    names: List[str] = []
    seen = set()
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if line in ("Bounds", "Binaries", "End", "Subject To", "Minimize"):
            section = line
            continue
        if section == "Bounds":
            tok = line.split("<=")[1].strip() if "<=" in line else line.split("=")[0].strip()
            if tok not in seen:
                seen.add(tok)
                names.append(tok)
        elif section == "Binaries":
            for tok in line.split():
                if tok not in seen:
                    seen.add(tok)
                    names.append(tok)
    return names

"""Line-oriented text formats for languages, instances, gadgets, operations.

Values are written as integers, p/q rationals, or 'inf'.  '#' starts a
comment; blank lines are ignored.  Parse errors carry 1-based line numbers.
All serializers emit deterministic output and round-trip exactly.
"""

from __future__ import annotations

from collections import Counter

from .errors import ParseError
from .model import ConstraintLanguage, ValuedConstraint, VCSPInstance, WeightedRelation
from .values import INF, ExtValue, format_value, parse_value


def _logical_lines(text: str):
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield i, line


def _parse_label(token: str, domain_size: int, line_no: int) -> int:
    try:
        v = int(token)
    except ValueError:
        raise ParseError(line_no, f"expected a domain label, got {token!r}")
    if not 0 <= v < domain_size:
        raise ParseError(line_no, f"label {v} outside domain 0..{domain_size - 1}")
    return v


def parse_language(text: str) -> ConstraintLanguage:
    lines = list(_logical_lines(text))
    if not lines:
        raise ParseError(1, "empty language file")
    pos = 0
    line_no, first = lines[pos]
    parts = first.split()
    if parts[0] != "domain" or len(parts) != 2:
        raise ParseError(line_no, "language file must start with 'domain <d>'")
    try:
        d = int(parts[1])
    except ValueError:
        raise ParseError(line_no, f"bad domain size {parts[1]!r}")
    if d < 1:
        raise ParseError(line_no, f"domain size must be positive, got {d}")
    lang = ConstraintLanguage(d)
    pos += 1
    while pos < len(lines):
        line_no, line = lines[pos]
        parts = line.split()
        if parts[0] != "relation" or len(parts) != 3:
            raise ParseError(line_no, f"expected 'relation <name> <arity>', got {line!r}")
        name = parts[1]
        try:
            arity = int(parts[2])
        except ValueError:
            raise ParseError(line_no, f"bad arity {parts[2]!r}")
        if arity < 1:
            raise ParseError(line_no, f"arity must be positive, got {arity}")
        pos += 1
        entries: dict[tuple, ExtValue] = {}
        default = INF
        saw_default = False
        closed = False
        while pos < len(lines):
            line_no, line = lines[pos]
            if line == "end":
                closed = True
                pos += 1
                break
            if ":" not in line:
                raise ParseError(line_no, f"expected '<tuple> : <value>' or 'end', got {line!r}")
            lhs, _, rhs = line.partition(":")
            lhs = lhs.strip()
            rhs = rhs.strip()
            try:
                value = parse_value(rhs)
            except ValueError as exc:
                raise ParseError(line_no, str(exc))
            if lhs == "default":
                if saw_default:
                    raise ParseError(line_no, "duplicate default line")
                default = value
                saw_default = True
                pos += 1
                continue
            tokens = lhs.split()
            if len(tokens) != arity:
                raise ParseError(
                    line_no, f"tuple has {len(tokens)} labels, relation arity is {arity}"
                )
            tup = tuple(_parse_label(t, d, line_no) for t in tokens)
            if tup in entries:
                raise ParseError(line_no, f"duplicate tuple {tup}")
            entries[tup] = value
            pos += 1
        if not closed:
            raise ParseError(line_no, f"relation {name!r} not closed with 'end'")
        try:
            lang.add(WeightedRelation.from_entries(name, arity, d, entries, default))
        except ValueError as exc:
            raise ParseError(line_no, str(exc))
    return lang


def serialize_language(lang: ConstraintLanguage) -> str:
    out = [f"domain {lang.domain_size}"]
    for rel in lang.relations():
        out.append(f"relation {rel.name} {rel.arity}")
        counts = Counter(rel.table)
        default = counts.most_common(1)[0][0]
        for tup, val in rel.items():
            if val != default:
                out.append(f"{' '.join(map(str, tup))} : {format_value(val)}")
        out.append(f"default : {format_value(default)}")
        out.append("end")
    return "\n".join(out) + "\n"


def _parse_constraint_lines(lines, start, lang, num_vars, instance, header_no):
    pos = start
    while pos < len(lines):
        line_no, line = lines[pos]
        parts = line.split()
        if parts[0] != "constraint":
            raise ParseError(line_no, f"expected 'constraint <relname> <vars>', got {line!r}")
        if len(parts) < 3:
            raise ParseError(line_no, "constraint line needs a relation name and variables")
        name = parts[1]
        if name not in lang:
            raise ParseError(line_no, f"unknown relation {name!r}")
        rel = lang.get(name)
        scope = []
        for tok in parts[2:]:
            try:
                v = int(tok)
            except ValueError:
                raise ParseError(line_no, f"bad variable index {tok!r}")
            if not 0 <= v < num_vars:
                raise ParseError(line_no, f"variable {v} outside 0..{num_vars - 1}")
            scope.append(v)
        if len(scope) != rel.arity:
            raise ParseError(
                line_no,
                f"relation {name!r} has arity {rel.arity}, scope has {len(scope)} variables",
            )
        instance.add(ValuedConstraint(rel, scope))
        pos += 1
    return instance


def parse_instance(text: str, lang: ConstraintLanguage) -> VCSPInstance:
    lines = list(_logical_lines(text))
    if not lines:
        raise ParseError(1, "empty instance file")
    line_no, first = lines[0]
    parts = first.split()
    if parts[0] != "vars" or len(parts) != 2:
        raise ParseError(line_no, "instance file must start with 'vars <n>'")
    try:
        n = int(parts[1])
    except ValueError:
        raise ParseError(line_no, f"bad variable count {parts[1]!r}")
    if n < 0:
        raise ParseError(line_no, "variable count must be nonnegative")
    inst = VCSPInstance(n, lang.domain_size)
    return _parse_constraint_lines(lines, 1, lang, n, inst, line_no)


def serialize_instance(inst: VCSPInstance) -> str:
    out = [f"vars {inst.num_vars}"]
    for c in inst.constraints:
        out.append(f"constraint {c.relation.name} {' '.join(map(str, c.scope))}")
    return "\n".join(out) + "\n"


def parse_gadget(text: str, lang: ConstraintLanguage):
    """Parse a gadget file.

    Format: 'gadget <relname> external <x_1> .. <x_m>' followed by an
    instance body ('vars <n>' plus constraint lines).  External variables
    index into the body's variables.  Returns a reductions.Gadget.
    """
    from .reductions import Gadget

    lines = list(_logical_lines(text))
    if not lines:
        raise ParseError(1, "empty gadget file")
    line_no, first = lines[0]
    parts = first.split()
    if parts[0] != "gadget" or len(parts) < 4 or parts[2] != "external":
        raise ParseError(line_no, "gadget file must start with 'gadget <relname> external <vars>'")
    target = parts[1]
    try:
        externals = tuple(int(t) for t in parts[3:])
    except ValueError:
        raise ParseError(line_no, "external variables must be integers")
    if len(lines) < 2:
        raise ParseError(line_no, "gadget file has no instance body")
    body_no, body_first = lines[1]
    bparts = body_first.split()
    if bparts[0] != "vars" or len(bparts) != 2:
        raise ParseError(body_no, "gadget body must start with 'vars <n>'")
    try:
        n = int(bparts[1])
    except ValueError:
        raise ParseError(body_no, f"bad variable count {bparts[1]!r}")
    for x in externals:
        if not 0 <= x < n:
            raise ParseError(line_no, f"external variable {x} outside 0..{n - 1}")
    if len(set(externals)) != len(externals):
        raise ParseError(line_no, "external variables must be distinct")
    inst = VCSPInstance(n, lang.domain_size)
    _parse_constraint_lines(lines, 2, lang, n, inst, body_no)
    return Gadget(target, externals, inst)


def serialize_gadget(gadget) -> str:
    head = f"gadget {gadget.target_name} external {' '.join(map(str, gadget.externals))}"
    return head + "\n" + serialize_instance(gadget.template)


def parse_operation(text: str):
    """Parse 'domain <d>' / 'op <name> <arity>' / value rows / 'end'."""
    from .algebra import Operation

    lines = list(_logical_lines(text))
    if not lines:
        raise ParseError(1, "empty operation file")
    line_no, first = lines[0]
    parts = first.split()
    if parts[0] != "domain" or len(parts) != 2:
        raise ParseError(line_no, "operation file must start with 'domain <d>'")
    d = int(parts[1])
    if len(lines) < 2:
        raise ParseError(line_no, "operation file has no 'op' header")
    line_no, header = lines[1]
    parts = header.split()
    if parts[0] != "op" or len(parts) != 3:
        raise ParseError(line_no, "expected 'op <name> <arity>'")
    name = parts[1]
    try:
        arity = int(parts[2])
    except ValueError:
        raise ParseError(line_no, f"bad arity {parts[2]!r}")
    table = [None] * d**arity
    closed = False
    pos = 2
    while pos < len(lines):
        line_no, line = lines[pos]
        if line == "end":
            closed = True
            pos += 1
            break
        if ":" not in line:
            raise ParseError(line_no, f"expected '<tuple> : <label>' or 'end', got {line!r}")
        lhs, _, rhs = line.partition(":")
        tokens = lhs.split()
        if len(tokens) != arity:
            raise ParseError(line_no, f"tuple has {len(tokens)} labels, op arity is {arity}")
        tup = tuple(_parse_label(t, d, line_no) for t in tokens)
        idx = WeightedRelation.encode(tup, d)
        if table[idx] is not None:
            raise ParseError(line_no, f"duplicate tuple {tup}")
        table[idx] = _parse_label(rhs.strip(), d, line_no)
        pos += 1
    if not closed:
        raise ParseError(line_no, "operation not closed with 'end'")
    if any(v is None for v in table):
        raise ParseError(line_no, f"operation {name!r} is missing tuples")
    if pos != len(lines):
        raise ParseError(lines[pos][0], "trailing content after 'end'")
    return Operation(name, arity, d, table)


def serialize_operation(op) -> str:
    out = [f"domain {op.domain_size}", f"op {op.name} {op.arity}"]
    for tup, val in op.items():
        out.append(f"{' '.join(map(str, tup))} : {val}")
    out.append("end")
    return "\n".join(out) + "\n"

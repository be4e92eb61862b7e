import pytest

from vcsprelax.errors import ParseError
from vcsprelax.fileformat import (
    parse_gadget,
    parse_instance,
    parse_language,
    parse_operation,
    serialize_gadget,
    serialize_instance,
    serialize_language,
    serialize_operation,
)
from vcsprelax.model import WeightedRelation
from vcsprelax.values import INF, ExtValue

LANG_TEXT = """\
# soft implication plus a parity relation
domain 2
relation imp 2
1 0 : 1
default : 0
end
relation xor1 2
0 1 : 0
1 0 : 0
end
relation half 1
0 : 1/2
1 : 0
end
"""


def test_parse_language_basics():
    lang = parse_language(LANG_TEXT)
    assert lang.domain_size == 2
    imp = lang.get("imp")
    assert imp.value((1, 0)) == ExtValue(1)
    assert imp.value((0, 0)) == ExtValue(0)
    xor1 = lang.get("xor1")
    assert xor1.value((0, 0)) == INF  # missing default means infinity
    assert xor1.feasible_tuples() == [(0, 1), (1, 0)]
    from fractions import Fraction

    assert lang.get("half").value((0,)) == ExtValue(Fraction(1, 2))


def test_language_roundtrip():
    lang = parse_language(LANG_TEXT)
    text = serialize_language(lang)
    again = parse_language(text)
    assert again.names() == lang.names()
    for name in lang.names():
        assert again.get(name).table == lang.get(name).table
    assert serialize_language(again) == text


@pytest.mark.parametrize(
    "text,line",
    [
        ("relation r 2\nend\n", 1),
        ("domain 2\nrelation r\nend\n", 2),
        ("domain 2\nrelation r 1\n0 : 1\n", 3),
        ("domain 2\nrelation r 1\n5 : 1\nend\n", 3),
        ("domain 2\nrelation r 1\n0 : 1/0\nend\n", 3),
        ("domain 2\nrelation r 1\n0 0 : 1\nend\n", 3),
        ("domain 2\nrelation r 1\n0 : 1\n0 : 2\nend\n", 4),
        ("domain 2\nrelation r 1\ndefault : 0\ndefault : 1\nend\n", 4),
    ],
)
def test_parse_language_errors_carry_line_numbers(text, line):
    with pytest.raises(ParseError) as info:
        parse_language(text)
    assert info.value.line_no == line


INSTANCE_TEXT = """\
vars 3
constraint imp 0 1
constraint imp 1 2
constraint half 0
"""


def test_parse_instance_and_roundtrip():
    lang = parse_language(LANG_TEXT)
    inst = parse_instance(INSTANCE_TEXT, lang)
    assert inst.num_vars == 3
    assert len(inst.constraints) == 3
    assert inst.constraints[0].scope == (0, 1)
    text = serialize_instance(inst)
    again = parse_instance(text, lang)
    assert serialize_instance(again) == text


@pytest.mark.parametrize(
    "text,line",
    [
        ("constraint imp 0 1\n", 1),
        ("vars 2\nconstraint nosuch 0 1\n", 2),
        ("vars 2\nconstraint imp 0\n", 2),
        ("vars 2\nconstraint imp 0 5\n", 2),
        ("vars 2\nconstraint imp 0 x\n", 2),
    ],
)
def test_parse_instance_errors(text, line):
    lang = parse_language(LANG_TEXT)
    with pytest.raises(ParseError) as info:
        parse_instance(text, lang)
    assert info.value.line_no == line


GADGET_TEXT = """\
gadget chain external 0 2
vars 3
constraint imp 0 1
constraint imp 1 2
"""


def test_parse_gadget_and_roundtrip():
    lang = parse_language(LANG_TEXT)
    g = parse_gadget(GADGET_TEXT, lang)
    assert g.target_name == "chain"
    assert g.externals == (0, 2)
    assert g.template.num_vars == 3
    text = serialize_gadget(g)
    again = parse_gadget(text, lang)
    assert serialize_gadget(again) == text


def test_parse_gadget_errors():
    lang = parse_language(LANG_TEXT)
    with pytest.raises(ParseError):
        parse_gadget("gadget g external 0 0\nvars 2\n", lang)  # repeated external
    with pytest.raises(ParseError):
        parse_gadget("gadget g external 5\nvars 2\n", lang)  # out of range


OP_TEXT = """\
domain 2
op minimum 2
0 0 : 0
0 1 : 0
1 0 : 0
1 1 : 1
end
"""


def test_parse_operation_and_roundtrip():
    op = parse_operation(OP_TEXT)
    assert op.name == "minimum"
    assert op.apply((1, 0)) == 0
    assert op.apply((1, 1)) == 1
    text = serialize_operation(op)
    assert parse_operation(text).table == op.table


def test_parse_operation_missing_row():
    bad = "domain 2\nop f 1\n0 : 0\nend\n"
    with pytest.raises(ParseError):
        parse_operation(bad)

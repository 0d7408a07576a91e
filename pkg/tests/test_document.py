from __future__ import annotations

import pytest
from hypothesis import given, settings

import oracles
from apifray.document import (
    ArrayNode,
    Attr,
    BooleanNode,
    DocumentFormat,
    DocumentTree,
    ElementNode,
    FieldPath,
    FormatMismatch,
    MalformedDocument,
    NullNode,
    NumberNode,
    ObjectNode,
    PathSyntaxError,
    Step,
    StringNode,
    TextNode,
    detect_format,
    enumerate_removal_targets,
    parse,
    parse_path,
    resolve,
    serialize,
    trees_equal,
    walk_values,
)
from strategies import (
    dump_compact,
    json_documents,
    spec_to_bytes,
    xml_specs,
)
from hypothesis import strategies as st

JSON = DocumentFormat.JSON
XML = DocumentFormat.XML


# --- parsing ---------------------------------------------------------------

def test_json_number_lexemes_survive():
    tree = parse(b'{"a":1e10,"b":0.50,"c":-0,"d":12345678901234567890}', JSON)
    root = tree.root
    assert isinstance(root, ObjectNode)
    lexemes = [n.lexeme for _, n in root.entries]
    assert lexemes == ["1e10", "0.50", "-0", "12345678901234567890"]


def test_json_object_order_preserved():
    tree = parse(b'{"z":1,"a":2,"m":3}', JSON)
    assert [k for k, _ in tree.root.entries] == ["z", "a", "m"]


def test_json_duplicate_keys_rejected():
    with pytest.raises(MalformedDocument) as exc:
        parse(b'{"a":1,"a":2}', JSON)
    assert "duplicate" in exc.value.reason


def test_json_syntax_error_position():
    with pytest.raises(MalformedDocument) as exc:
        parse(b'{"a"', JSON)
    assert exc.value.position == 4


def test_empty_body_rejected():
    for fmt in (JSON, XML):
        with pytest.raises(MalformedDocument) as exc:
            parse(b"", fmt)
        assert exc.value.position == 0


def test_opaque_cannot_parse():
    with pytest.raises(ValueError):
        parse(b"anything", DocumentFormat.OPAQUE)


def test_xml_attribute_order_preserved():
    tree = parse(b'<a z="1" b="2" y="3"/>', XML)
    assert [n for n, _ in tree.root.attrs] == ["z", "b", "y"]


def test_xml_prefixed_names_kept_verbatim():
    tree = parse(b"<ns:a><ns:b/></ns:a>", XML)
    assert tree.root.name == "ns:a"
    assert tree.root.children[0].name == "ns:b"
    assert serialize(tree) == b"<ns:a><ns:b/></ns:a>"


def test_xml_duplicate_attributes_rejected():
    with pytest.raises(MalformedDocument):
        parse(b'<a x="1" x="2"/>', XML)


def test_xml_mismatched_tag_rejected():
    with pytest.raises(MalformedDocument) as exc:
        parse(b"<a><b></a>", XML)
    assert "mismatch" in exc.value.reason
    assert 0 <= exc.value.position <= 10


def test_xml_trailing_garbage_rejected():
    with pytest.raises(MalformedDocument):
        parse(b"<a/><b/>", XML)


def test_xml_cdata_becomes_text():
    tree = parse(b"<a><![CDATA[x < y]]></a>", XML)
    assert tree.root.children == (TextNode("x < y"),)
    assert serialize(tree) == b"<a>x &lt; y</a>"


def test_xml_text_coalesced_across_comments():
    tree = parse(b"<a>x<!-- c -->y</a>", XML)
    assert tree.root.children == (TextNode("xy"),)


# --- serialization ----------------------------------------------------------

def test_serialize_empty_element_self_closes():
    assert serialize(parse(b"<a></a>", XML)) == b"<a/>"


def test_serialize_attr_escaping_round_trips():
    tree = DocumentTree(
        XML, ElementNode("a", (("v", 'x"y\n\t<&'),), ())
    )
    body = serialize(tree)
    again = parse(body, XML)
    assert again.root.attr("v") == 'x"y\n\t<&'


def test_serialize_rejects_cross_format_nodes():
    with pytest.raises(ValueError):
        serialize(DocumentTree(JSON, ElementNode("a", (), ())))
    with pytest.raises(ValueError):
        serialize(DocumentTree(XML, StringNode("s")))


@settings(max_examples=150)
@given(json_documents)
def test_compact_json_round_trips_byte_identical(doc):
    body = dump_compact(doc)
    assert serialize(parse(body, JSON)) == body


@settings(max_examples=100)
@given(xml_specs)
def test_xml_round_trip_preserves_semantics(spec):
    body = spec_to_bytes(spec)
    tree = parse(body, XML)
    reparsed = parse(serialize(tree), XML)
    assert trees_equal(tree, reparsed)


@settings(max_examples=100)
@given(xml_specs)
def test_xml_serialization_reaches_fixpoint(spec):
    once = serialize(parse(spec_to_bytes(spec), XML))
    assert serialize(parse(once, XML)) == once


# --- field paths -------------------------------------------------------------

def test_path_text_forms():
    assert parse_path("/") == FieldPath(())
    assert parse_path("") == FieldPath(())
    assert parse_path("/a/0/name") == FieldPath((Step("a"), Step("0"), Step("name")))
    assert parse_path("/root/child[2]@attr") == FieldPath(
        (Step("root"), Step("child", 2), Attr("attr"))
    )
    assert parse_path("/a~1b/c~0d/e~2f/g~3h") == FieldPath(
        (Step("a/b"), Step("c~d"), Step("e[f"), Step("g@h"))
    )


def test_path_render_canonicalizes_ordinal_one():
    assert parse_path("/a[1]").render() == "/a"


def test_path_empty_name_escape():
    empty = FieldPath((Step(""),))
    assert empty.render() == "/~4"
    assert parse_path("/~4") == empty
    assert parse_path("/~4") != parse_path("/")
    tree = parse(b'{"":5}', JSON)
    assert resolve(tree, empty) == NumberNode("5")
    with pytest.raises(PathSyntaxError):
        parse_path("/a~4b")  # only valid as a standalone piece


def test_path_syntax_errors():
    bad = [
        "a/b",
        "/a//b",
        "/a~9",
        "/a~",
        "/a[0]",
        "/a[x]",
        "/a[2",
        "/@",
        "/a@b@c",
        "/a@b/c",
    ]
    for text in bad:
        with pytest.raises(PathSyntaxError):
            parse_path(text)


path_names = st.text(
    alphabet=list("ab0~/[@é "), min_size=0, max_size=6
)
_steps = st.builds(Step, name=path_names, ordinal=st.integers(1, 12))
_maybe_attr = st.one_of(st.none(), st.builds(Attr, name=path_names))
field_paths = st.builds(
    lambda steps, attr: FieldPath(tuple(steps) + ((attr,) if attr else ())),
    st.lists(_steps, max_size=4),
    _maybe_attr,
)


@settings(max_examples=200)
@given(field_paths)
def test_path_render_parse_round_trip(path):
    assert parse_path(path.render()) == path


# --- resolve -----------------------------------------------------------------

def test_resolve_json():
    tree = parse(b'{"a":[{"name":"x"},{"name":"y"}],"a/b":7}', JSON)
    assert resolve(tree, parse_path("/")) is tree.root
    assert resolve(tree, parse_path("/a/1/name")) == StringNode("y")
    assert resolve(tree, parse_path("/a~1b")) == NumberNode("7")
    assert resolve(tree, parse_path("/a/2/name")) is None
    assert resolve(tree, parse_path("/missing")) is None
    assert resolve(tree, parse_path("/a/x")) is None


def test_resolve_xml():
    tree = parse(b'<r x="1"><i>a</i><i>b</i></r>', XML)
    assert resolve(tree, parse_path("/")) is tree.root
    assert resolve(tree, parse_path("/r")) is tree.root
    assert resolve(tree, parse_path("/r/i")).children == (TextNode("a"),)
    assert resolve(tree, parse_path("/r/i[2]")).children == (TextNode("b"),)
    assert resolve(tree, parse_path("/r/i[3]")) is None
    assert resolve(tree, parse_path("/r@x")).value == "1"
    assert resolve(tree, parse_path("/r@y")) is None
    assert resolve(tree, parse_path("/wrong")) is None
    assert resolve(tree, parse_path("/r[2]")) is None


@settings(max_examples=100)
@given(json_documents)
def test_walk_values_agrees_with_resolve_json(doc):
    tree = parse(dump_compact(doc), JSON)
    for path, node in walk_values(tree):
        assert resolve(tree, path) == node


@settings(max_examples=75)
@given(xml_specs)
def test_walk_values_agrees_with_resolve_xml(spec):
    tree = parse(spec_to_bytes(spec), XML)
    for path, node in walk_values(tree):
        assert resolve(tree, path) == node


# --- removal-target enumeration -----------------------------------------------

def test_removal_targets_json_frozen_example():
    tree = parse(b'{"a":1,"b":{"c":2}}', JSON)
    assert [str(p) for p in enumerate_removal_targets(tree)] == ["/a", "/b/c", "/b"]


def test_removal_targets_xml_frozen_example():
    tree = parse(b'<d a="1"><e/></d>', XML)
    assert [str(p) for p in enumerate_removal_targets(tree)] == ["/d@a", "/d/e"]


def test_removal_targets_skip_array_items():
    tree = parse(b'[{"a":1},2,[{"b":3}]]', JSON)
    assert [str(p) for p in enumerate_removal_targets(tree)] == ["/0/a", "/2/0/b"]


def test_removal_targets_root_excluded():
    assert enumerate_removal_targets(parse(b'{"a":1}', JSON)) == [
        FieldPath((Step("a"),))
    ]
    assert enumerate_removal_targets(parse(b"<r/>", XML)) == []
    assert enumerate_removal_targets(parse(b"[1,2]", JSON)) == []


def test_removal_targets_xml_ordinals():
    tree = parse(b"<r><i><j/></i><i/><k/></r>", XML)
    assert [str(p) for p in enumerate_removal_targets(tree)] == [
        "/r/i/j",
        "/r/i",
        "/r/i[2]",
        "/r/k",
    ]


@settings(max_examples=150)
@given(json_documents)
def test_removal_targets_match_oracle_json(doc):
    body = dump_compact(doc)
    tree = parse(body, JSON)
    assert [p.render() for p in enumerate_removal_targets(tree)] == (
        oracles.removal_paths_json(body)
    )


@settings(max_examples=100)
@given(xml_specs)
def test_removal_targets_match_oracle_xml(spec):
    body = spec_to_bytes(spec)
    tree = parse(body, XML)
    assert [p.render() for p in enumerate_removal_targets(tree)] == (
        oracles.removal_paths_xml(body)
    )


@settings(max_examples=75)
@given(st.one_of(json_documents.map(dump_compact), xml_specs.map(spec_to_bytes)))
def test_removal_targets_resolvable_and_leaf_first(body):
    fmt = XML if body.startswith(b"<") else JSON
    tree = parse(body, fmt)
    targets = enumerate_removal_targets(tree)
    for t in targets:
        assert resolve(tree, t) is not None
    for i, earlier in enumerate(targets):
        for later in targets[i + 1 :]:
            assert not earlier.is_prefix_of(later)


# --- comparison ----------------------------------------------------------------

def test_json_equality_ignores_key_order():
    a = parse(b'{"a":1,"b":{"x":1,"y":2}}', JSON)
    b = parse(b'{"b":{"y":2,"x":1},"a":1}', JSON)
    assert trees_equal(a, b)


def test_json_equality_respects_array_order():
    assert not trees_equal(parse(b"[1,2]", JSON), parse(b"[2,1]", JSON))


def test_json_equality_compares_numbers_by_value():
    assert trees_equal(parse(b'{"n":1e2}', JSON), parse(b'{"n":100.0}', JSON))
    assert not trees_equal(parse(b'{"n":100}', JSON), parse(b'{"n":"100"}', JSON))
    assert not trees_equal(parse(b"[true]", JSON), parse(b"[1]", JSON))


def test_xml_equality_whitespace_between_elements_ignored():
    assert trees_equal(
        parse(b"<a>\n  <b/>\n  <c/>\n</a>", XML), parse(b"<a><b/><c/></a>", XML)
    )


def test_xml_equality_whitespace_only_text_significant_without_children():
    assert not trees_equal(parse(b"<a> </a>", XML), parse(b"<a/>", XML))


def test_xml_equality_attr_order_ignored_child_order_not():
    assert trees_equal(
        parse(b'<a x="1" y="2"/>', XML), parse(b'<a y="2" x="1"/>', XML)
    )
    assert not trees_equal(
        parse(b"<a><b/><c/></a>", XML), parse(b"<a><c/><b/></a>", XML)
    )


def test_trees_equal_requires_same_format():
    with pytest.raises(FormatMismatch):
        trees_equal(parse(b"[1]", JSON), parse(b"<a/>", XML))


@settings(max_examples=100)
@given(json_documents)
def test_json_equality_matches_oracle(doc):
    body = dump_compact(doc)
    shuffled = dump_compact(doc)  # same content
    assert trees_equal(parse(body, JSON), parse(shuffled, JSON)) == (
        oracles.json_semantically_equal(body, shuffled)
    )


# --- fixture corpus ------------------------------------------------------------

def test_corpus_is_large_enough(json_corpus, xml_corpus):
    assert len(json_corpus) >= 20
    assert len(xml_corpus) >= 10


def test_corpus_round_trips(json_corpus, xml_corpus):
    for _, body in json_corpus:
        tree = parse(body, JSON)
        assert trees_equal(tree, parse(serialize(tree), JSON))
    for _, body in xml_corpus:
        tree = parse(body, XML)
        assert trees_equal(tree, parse(serialize(tree), XML))


# --- format detection ----------------------------------------------------------

def test_detect_format_media_type_wins():
    assert detect_format(b"anything", "application/json") is JSON
    assert detect_format(b"anything", "application/vnd.api+json") is JSON
    assert detect_format(b"anything", "text/xml; charset=utf-8") is XML
    assert detect_format(b"anything", "application/atom+xml") is XML


def test_detect_format_sniffs_when_type_is_inconclusive():
    assert detect_format(b'{"a": 1}', "text/plain") is JSON
    assert detect_format(b"<a/>", None) is XML
    assert detect_format(b"  [1, 2]", "application/octet-stream") is JSON
    assert detect_format(b"true", None) is JSON
    assert detect_format(b"-3.5", None) is JSON


def test_detect_format_opaque_fallbacks():
    assert detect_format(b"hello world", None) is DocumentFormat.OPAQUE
    assert detect_format(b"", None) is DocumentFormat.OPAQUE
    assert detect_format(b"{broken", None) is DocumentFormat.OPAQUE
    assert detect_format(b"<broken", "text/plain") is DocumentFormat.OPAQUE

"""Format-tagged parse trees for JSON and XML response bodies.

Both formats are parsed into one Node vocabulary so mutation operators can
be written once. Numbers keep their source lexeme so an untouched subtree
re-serializes byte-identically; XML keeps prefixed names verbatim (no
namespace resolution).
"""

from __future__ import annotations

import enum
import json
import xml.parsers.expat as _expat
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterator


class DocumentFormat(str, enum.Enum):
    """Body format tag. OPAQUE marks bodies no tree operator can touch."""

    JSON = "json"
    XML = "xml"
    OPAQUE = "opaque"


class MalformedDocument(ValueError):
    """Body violates its format's grammar.

    The proxy relies on this error as a positive signal: a malformation
    mutation succeeded exactly when re-parsing raises it.
    """

    def __init__(self, position: int, reason: str):
        super().__init__(f"malformed document at offset {position}: {reason}")
        self.position = position
        self.reason = reason


class FormatMismatch(ValueError):
    """Two trees of different formats were compared."""


class PathSyntaxError(ValueError):
    """A field-path string does not follow the canonical text form."""


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectNode:
    """JSON object; entries keep source order and keys are unique."""

    entries: tuple[tuple[str, Node], ...]

    def get(self, key: str) -> Node | None:
        for name, value in self.entries:
            if name == key:
                return value
        return None


@dataclass(frozen=True)
class ArrayNode:
    items: tuple[Node, ...]


@dataclass(frozen=True)
class StringNode:
    value: str


@dataclass(frozen=True)
class NumberNode:
    """JSON number as its exact source lexeme plus numeric interpretation."""

    lexeme: str

    @property
    def value(self) -> Decimal:
        try:
            return Decimal(self.lexeme)
        except InvalidOperation:
            # NaN / Infinity literals the stdlib parser lets through
            return Decimal("NaN")


@dataclass(frozen=True)
class BooleanNode:
    value: bool


@dataclass(frozen=True)
class NullNode:
    pass


@dataclass(frozen=True)
class ElementNode:
    """XML element; attrs keep source order, names stay prefixed verbatim."""

    name: str
    attrs: tuple[tuple[str, str], ...]
    children: tuple[Node, ...]

    def attr(self, name: str) -> str | None:
        for n, v in self.attrs:
            if n == name:
                return v
        return None

    def element_children(self) -> tuple[ElementNode, ...]:
        return tuple(c for c in self.children if isinstance(c, ElementNode))


@dataclass(frozen=True)
class TextNode:
    text: str


@dataclass(frozen=True)
class AttributeNode:
    """Materialized view of one element attribute, returned by resolve()."""

    name: str
    value: str


Node = (
    ObjectNode
    | ArrayNode
    | StringNode
    | NumberNode
    | BooleanNode
    | NullNode
    | ElementNode
    | TextNode
    | AttributeNode
)

_JSON_NODE_TYPES = (ObjectNode, ArrayNode, StringNode, NumberNode, BooleanNode, NullNode)
_XML_NODE_TYPES = (ElementNode, TextNode, AttributeNode)


@dataclass(frozen=True)
class DocumentTree:
    format: DocumentFormat
    root: Node


# ---------------------------------------------------------------------------
# Field paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    """One named step: a JSON key, a JSON array index (digit name), or an
    XML child element with a one-based ordinal among same-name siblings."""

    name: str
    ordinal: int = 1


@dataclass(frozen=True)
class Attr:
    """Trailing attribute selector on an XML element step."""

    name: str


Segment = Step | Attr

_ESCAPES = {"~": "~0", "/": "~1", "[": "~2", "@": "~3"}
_UNESCAPES = {"0": "~", "1": "/", "2": "[", "3": "@", "4": ""}


def _escape_name(name: str) -> str:
    if name == "":
        return "~4"  # JSON allows empty keys; bare "" would collide with "/"
    out = []
    for ch in name:
        out.append(_ESCAPES.get(ch, ch))
    return "".join(out)


@dataclass(frozen=True)
class FieldPath:
    """Address of zero-or-one node in a tree.

    Canonical text form: ``/key/0/name`` for JSON, ``/root/child[2]@attr``
    for XML (ordinals one-based, ``[1]`` omitted). ``~``, ``/``, ``[`` and
    ``@`` inside names escape to ``~0``..``~3``; an empty name renders as
    the standalone escape ``~4``.
    """

    segments: tuple[Segment, ...]

    def render(self) -> str:
        if not self.segments:
            return "/"
        pieces: list[str] = []
        for seg in self.segments:
            if isinstance(seg, Step):
                text = _escape_name(seg.name)
                if seg.ordinal != 1:
                    text += f"[{seg.ordinal}]"
                pieces.append(text)
            else:
                if not pieces:
                    pieces.append("@" + _escape_name(seg.name))
                else:
                    pieces[-1] += "@" + _escape_name(seg.name)
        return "/" + "/".join(pieces)

    def child(self, seg: Segment) -> FieldPath:
        return FieldPath(self.segments + (seg,))

    def parent(self) -> FieldPath:
        return FieldPath(self.segments[:-1])

    def is_prefix_of(self, other: FieldPath) -> bool:
        n = len(self.segments)
        return len(other.segments) > n and other.segments[:n] == self.segments

    def __str__(self) -> str:
        return self.render()


def parse_path(text: str) -> FieldPath:
    """Parse the canonical path text form; raises PathSyntaxError."""
    if text == "" or text == "/":
        return FieldPath(())
    if not text.startswith("/"):
        raise PathSyntaxError(f"path must start with '/': {text!r}")

    # split on unescaped '/', keeping escape pairs intact
    pieces: list[str] = []
    current: list[str] = []
    i = 1
    while i < len(text):
        ch = text[i]
        if ch == "~":
            if i + 1 >= len(text) or text[i + 1] not in _UNESCAPES:
                raise PathSyntaxError(f"bad escape at offset {i} in {text!r}")
            current.append(text[i : i + 2])
            i += 2
        elif ch == "/":
            pieces.append("".join(current))
            current = []
            i += 1
        else:
            current.append(ch)
            i += 1
    pieces.append("".join(current))

    segments: list[Segment] = []
    for idx, piece in enumerate(pieces):
        if piece == "":
            raise PathSyntaxError(f"empty segment in {text!r}")
        step_part, attr_part = _split_once_unescaped(piece, "@", text)
        if attr_part is not None and idx != len(pieces) - 1:
            raise PathSyntaxError(f"attribute selector must be last in {text!r}")
        if step_part:
            name, ordinal = _split_ordinal(step_part, text)
            segments.append(Step(_unescape_name(name, text), ordinal))
        elif attr_part is None:
            raise PathSyntaxError(f"empty step in {text!r}")
        if attr_part is not None:
            if attr_part == "":
                raise PathSyntaxError(f"empty attribute name in {text!r}")
            segments.append(Attr(_unescape_name(attr_part, text)))
    return FieldPath(tuple(segments))


def _split_once_unescaped(piece: str, sep: str, context: str) -> tuple[str, str | None]:
    i = 0
    while i < len(piece):
        if piece[i] == "~":
            i += 2
        elif piece[i] == sep:
            rest = piece[i + 1 :]
            if sep in _strip_escapes(rest):
                raise PathSyntaxError(f"repeated {sep!r} in segment of {context!r}")
            return piece[:i], rest
        else:
            i += 1
    return piece, None


def _strip_escapes(piece: str) -> str:
    out = []
    i = 0
    while i < len(piece):
        if piece[i] == "~":
            i += 2
        else:
            out.append(piece[i])
            i += 1
    return "".join(out)


def _split_ordinal(step_part: str, context: str) -> tuple[str, int]:
    i = 0
    bracket = -1
    while i < len(step_part):
        if step_part[i] == "~":
            i += 2
        elif step_part[i] == "[":
            bracket = i
            i += 1
        else:
            i += 1
    if bracket < 0:
        return step_part, 1
    if not step_part.endswith("]"):
        raise PathSyntaxError(f"unterminated ordinal in {context!r}")
    digits = step_part[bracket + 1 : -1]
    if not digits.isdigit() or int(digits) < 1:
        raise PathSyntaxError(f"ordinal must be a positive integer in {context!r}")
    return step_part[:bracket], int(digits)


def _unescape_name(piece: str, context: str) -> str:
    if piece == "~4":
        return ""
    out = []
    i = 0
    while i < len(piece):
        if piece[i] == "~":
            if i + 1 >= len(piece) or piece[i + 1] not in _UNESCAPES:
                raise PathSyntaxError(f"bad escape in {context!r}")
            if piece[i + 1] == "4":
                raise PathSyntaxError(
                    f"~4 only stands alone as an empty name in {context!r}"
                )
            out.append(_UNESCAPES[piece[i + 1]])
            i += 2
        else:
            out.append(piece[i])
            i += 1
    return "".join(out)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

class _Pairs(list):
    """Marker so object pair lists survive until the conversion walk."""


def _json_pairs_hook(pairs: list) -> _Pairs:
    seen: set[str] = set()
    for key, _ in pairs:
        if key in seen:
            raise MalformedDocument(-1, f"duplicate object key {key!r}")
        seen.add(key)
    return _Pairs(pairs)


def _json_convert(value: object) -> Node:
    if isinstance(value, _Pairs):
        return ObjectNode(tuple((k, _json_convert(v)) for k, v in value))
    if isinstance(value, NumberNode):
        return value
    if isinstance(value, list):
        return ArrayNode(tuple(_json_convert(v) for v in value))
    if isinstance(value, str):
        return StringNode(value)
    if isinstance(value, bool):
        return BooleanNode(value)
    if value is None:
        return NullNode()
    raise AssertionError(f"unexpected parse value {value!r}")


def _parse_json(body: bytes) -> Node:
    try:
        raw = json.loads(
            body,
            object_pairs_hook=_json_pairs_hook,
            parse_int=NumberNode,
            parse_float=NumberNode,
            parse_constant=NumberNode,
        )
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.pos, exc.msg) from None
    return _json_convert(raw)


def _parse_xml(body: bytes) -> ElementNode:
    parser = _expat.ParserCreate()
    parser.ordered_attributes = True
    parser.buffer_text = True

    stack: list[tuple[str, tuple[tuple[str, str], ...], list[Node]]] = []
    roots: list[ElementNode] = []

    def start(name: str, attrs: list[str]) -> None:
        pairs = tuple((attrs[i], attrs[i + 1]) for i in range(0, len(attrs), 2))
        stack.append((name, pairs, []))

    def end(_name: str) -> None:
        name, attrs, children = stack.pop()
        node = ElementNode(name, attrs, tuple(children))
        if stack:
            stack[-1][2].append(node)
        else:
            roots.append(node)

    def chars(text: str) -> None:
        if not stack:
            return  # whitespace outside the root element
        children = stack[-1][2]
        if children and isinstance(children[-1], TextNode):
            children[-1] = TextNode(children[-1].text + text)
        else:
            children.append(TextNode(text))

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(body, True)
    except _expat.ExpatError as exc:
        raise MalformedDocument(parser.ErrorByteIndex, str(exc)) from None
    if not roots:
        raise MalformedDocument(0, "no root element")
    return roots[0]


def parse(body: bytes, fmt: DocumentFormat) -> DocumentTree:
    """Parse a response body into a tree; raises MalformedDocument."""
    if isinstance(body, str):
        body = body.encode("utf-8")
    if not body:
        raise MalformedDocument(0, "empty body")
    if fmt is DocumentFormat.JSON:
        return DocumentTree(fmt, _parse_json(body))
    if fmt is DocumentFormat.XML:
        return DocumentTree(fmt, _parse_xml(body))
    raise ValueError(f"cannot parse format {fmt}")


def detect_format(body: bytes, content_type: str | None = None) -> DocumentFormat:
    """Decide which tree format a response body is in.

    The declared media type wins when it is conclusive (json/xml subtypes
    and +json/+xml suffixes); otherwise the body is sniffed by actually
    parsing it. Anything else is OPAQUE.
    """
    if content_type:
        subtype = content_type.split(";", 1)[0].strip().lower().partition("/")[2]
        if subtype == "json" or subtype.endswith("+json"):
            return DocumentFormat.JSON
        if subtype == "xml" or subtype.endswith("+xml"):
            return DocumentFormat.XML
    head = body.lstrip()[:1]
    if head == b"<":
        try:
            parse(body, DocumentFormat.XML)
            return DocumentFormat.XML
        except MalformedDocument:
            return DocumentFormat.OPAQUE
    if head in (b"{", b"[", b'"', b"-", b"t", b"f", b"n") or head.isdigit():
        try:
            parse(body, DocumentFormat.JSON)
            return DocumentFormat.JSON
        except MalformedDocument:
            return DocumentFormat.OPAQUE
    return DocumentFormat.OPAQUE


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _write_json(node: Node, out: list[str]) -> None:
    if isinstance(node, ObjectNode):
        out.append("{")
        for i, (key, value) in enumerate(node.entries):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write_json(value, out)
        out.append("}")
    elif isinstance(node, ArrayNode):
        out.append("[")
        for i, item in enumerate(node.items):
            if i:
                out.append(",")
            _write_json(item, out)
        out.append("]")
    elif isinstance(node, StringNode):
        out.append(json.dumps(node.value, ensure_ascii=False))
    elif isinstance(node, NumberNode):
        out.append(node.lexeme)
    elif isinstance(node, BooleanNode):
        out.append("true" if node.value else "false")
    elif isinstance(node, NullNode):
        out.append("null")
    else:
        raise ValueError(f"node {type(node).__name__} not valid in a JSON tree")


def _escape_xml_text(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _escape_xml_attr(value: str) -> str:
    value = value.replace("&", "&amp;").replace("<", "&lt;").replace('"', "&quot;")
    # keep literal tabs/newlines through attribute-value normalization
    return value.replace("\t", "&#9;").replace("\n", "&#10;").replace("\r", "&#13;")


def _write_xml(node: Node, out: list[str]) -> None:
    if isinstance(node, ElementNode):
        out.append(f"<{node.name}")
        for name, value in node.attrs:
            out.append(f' {name}="{_escape_xml_attr(value)}"')
        if not node.children:
            out.append("/>")
            return
        out.append(">")
        for child in node.children:
            _write_xml(child, out)
        out.append(f"</{node.name}>")
    elif isinstance(node, TextNode):
        out.append(_escape_xml_text(node.text))
    else:
        raise ValueError(f"node {type(node).__name__} not valid in an XML tree")


def serialize(tree: DocumentTree) -> bytes:
    """Render a tree back to bytes; untouched number lexemes are byte-stable."""
    out: list[str] = []
    if tree.format is DocumentFormat.JSON:
        _write_json(tree.root, out)
    elif tree.format is DocumentFormat.XML:
        _write_xml(tree.root, out)
    else:
        raise ValueError(f"cannot serialize format {tree.format}")
    return "".join(out).encode("utf-8")


# ---------------------------------------------------------------------------
# Addressing
# ---------------------------------------------------------------------------

def resolve(tree: DocumentTree, path: FieldPath) -> Node | None:
    """Return the unique node a path addresses, or None. Never raises."""
    segments = path.segments
    if not segments:
        return tree.root

    node: Node = tree.root
    start = 0
    if tree.format is DocumentFormat.XML:
        first = segments[0]
        if not isinstance(first, Step) or not isinstance(node, ElementNode):
            return None
        if first.name != node.name or first.ordinal != 1:
            return None
        start = 1

    for seg in segments[start:]:
        if isinstance(seg, Attr):
            if not isinstance(node, ElementNode):
                return None
            value = node.attr(seg.name)
            if value is None:
                return None
            node = AttributeNode(seg.name, value)
        elif isinstance(node, ObjectNode):
            if seg.ordinal != 1:
                return None
            found = node.get(seg.name)
            if found is None:
                return None
            node = found
        elif isinstance(node, ArrayNode):
            if seg.ordinal != 1 or not seg.name.isdigit():
                return None
            index = int(seg.name)
            if index >= len(node.items):
                return None
            node = node.items[index]
        elif isinstance(node, ElementNode):
            count = 0
            for child in node.children:
                if isinstance(child, ElementNode) and child.name == seg.name:
                    count += 1
                    if count == seg.ordinal:
                        node = child
                        break
            else:
                return None
        else:
            return None
    return node


def enumerate_removal_targets(tree: DocumentTree) -> list[FieldPath]:
    """All removable fields in document order, leaves before their ancestors.

    Removable: JSON object members; XML child elements and attributes.
    JSON array items and XML text runs are not fields. Removing any prefix
    of this list (against the original tree) leaves a well-formed document.
    """
    out: list[FieldPath] = []

    def walk_json(node: Node, path: FieldPath, is_member: bool) -> None:
        if isinstance(node, ObjectNode):
            for key, value in node.entries:
                walk_json(value, path.child(Step(key)), True)
        elif isinstance(node, ArrayNode):
            for i, item in enumerate(node.items):
                walk_json(item, path.child(Step(str(i))), False)
        if is_member:
            out.append(path)

    def walk_xml(node: ElementNode, path: FieldPath, removable: bool) -> None:
        for name, _ in node.attrs:
            out.append(path.child(Attr(name)))
        counts: dict[str, int] = {}
        for child in node.children:
            if not isinstance(child, ElementNode):
                continue
            counts[child.name] = counts.get(child.name, 0) + 1
            walk_xml(child, path.child(Step(child.name, counts[child.name])), True)
        if removable:
            out.append(path)

    if tree.format is DocumentFormat.JSON:
        walk_json(tree.root, FieldPath(()), False)
    elif isinstance(tree.root, ElementNode):
        walk_xml(tree.root, FieldPath((Step(tree.root.name),)), False)
    return out


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def _numbers_equal(a: NumberNode, b: NumberNode) -> bool:
    try:
        return Decimal(a.lexeme) == Decimal(b.lexeme)
    except InvalidOperation:
        return a.lexeme == b.lexeme


def _json_equal(a: Node, b: Node) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, ObjectNode):
        assert isinstance(b, ObjectNode)
        if len(a.entries) != len(b.entries):
            return False
        b_map = dict(b.entries)
        return all(k in b_map and _json_equal(v, b_map[k]) for k, v in a.entries)
    if isinstance(a, ArrayNode):
        assert isinstance(b, ArrayNode)
        return len(a.items) == len(b.items) and all(
            _json_equal(x, y) for x, y in zip(a.items, b.items)
        )
    if isinstance(a, NumberNode):
        assert isinstance(b, NumberNode)
        return _numbers_equal(a, b)
    return a == b


def _comparable_children(element: ElementNode) -> list[Node]:
    has_element_child = any(isinstance(c, ElementNode) for c in element.children)
    if not has_element_child:
        return list(element.children)
    return [
        c
        for c in element.children
        if not (isinstance(c, TextNode) and c.text.strip() == "")
    ]


def _xml_equal(a: Node, b: Node) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, ElementNode):
        assert isinstance(b, ElementNode)
        if a.name != b.name or dict(a.attrs) != dict(b.attrs):
            return False
        ca, cb = _comparable_children(a), _comparable_children(b)
        return len(ca) == len(cb) and all(_xml_equal(x, y) for x, y in zip(ca, cb))
    return a == b


def trees_equal(a: DocumentTree, b: DocumentTree) -> bool:
    """Semantic equality.

    JSON: object key order ignored, array order significant, numbers by
    value. XML: child order significant, attribute order ignored,
    whitespace-only text between elements ignored.
    """
    if a.format is not b.format:
        raise FormatMismatch(f"{a.format.value} vs {b.format.value}")
    if a.format is DocumentFormat.JSON:
        return _json_equal(a.root, b.root)
    return _xml_equal(a.root, b.root)


# ---------------------------------------------------------------------------
# Walking (shared by mutation operators and detectors)
# ---------------------------------------------------------------------------

def walk_values(tree: DocumentTree) -> Iterator[tuple[FieldPath, Node]]:
    """Yield (path, node) for every addressable value in document order.

    JSON yields every node; XML yields elements and their attributes (text
    runs have no address of their own). Every yielded pair round-trips:
    resolve(tree, path) == node.
    """

    def walk_json(node: Node, path: FieldPath) -> Iterator[tuple[FieldPath, Node]]:
        yield path, node
        if isinstance(node, ObjectNode):
            for key, value in node.entries:
                yield from walk_json(value, path.child(Step(key)))
        elif isinstance(node, ArrayNode):
            for i, item in enumerate(node.items):
                yield from walk_json(item, path.child(Step(str(i))))

    def walk_xml(node: ElementNode, path: FieldPath) -> Iterator[tuple[FieldPath, Node]]:
        yield path, node
        for name, value in node.attrs:
            yield path.child(Attr(name)), AttributeNode(name, value)
        counts: dict[str, int] = {}
        for child in node.children:
            if isinstance(child, ElementNode):
                counts[child.name] = counts.get(child.name, 0) + 1
                yield from walk_xml(child, path.child(Step(child.name, counts[child.name])))

    if tree.format is DocumentFormat.JSON:
        yield from walk_json(tree.root, FieldPath(()))
    elif isinstance(tree.root, ElementNode):
        yield from walk_xml(tree.root, FieldPath((Step(tree.root.name),)))

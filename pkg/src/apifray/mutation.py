"""The six response mutation operators.

Every operator is a pure function of (baseline bytes, parameters): the same
inputs always produce the same output bytes. Structural operators (field
addition, field removal, type change) work on the parse tree; the two
byte-level operators (malformed response, format disruption) splice the raw
body so the damage, or lack of it, is exactly controlled:

* malform deletes exactly one byte, chosen so the result no longer parses;
* disrupt_format only inserts whitespace, so the result parses to an
  equivalent tree and is never shorter than the input.
"""

from __future__ import annotations

import enum
import random
import re
import xml.parsers.expat as _expat
from dataclasses import dataclass, field

from .document import (
    ArrayNode,
    Attr,
    AttributeNode,
    DocumentFormat,
    DocumentTree,
    ElementNode,
    FieldPath,
    Node,
    NumberNode,
    ObjectNode,
    Step,
    StringNode,
    TextNode,
    enumerate_removal_targets,
    parse,
    parse_path,
    resolve,
    serialize,
    walk_values,
)


class MutationKind(str, enum.Enum):
    FIELD_ADDITION = "field_addition"
    FIELD_REMOVAL = "field_removal"
    MALFORMED_RESPONSE = "malformed_response"
    EMPTY_RESPONSE = "empty_response"
    TYPE_CHANGE = "type_change"
    FORMAT_DISRUPTION = "format_disruption"


# listing order is canonical: reports and enumerations follow it
KIND_ORDER: tuple[MutationKind, ...] = (
    MutationKind.FIELD_ADDITION,
    MutationKind.FIELD_REMOVAL,
    MutationKind.MALFORMED_RESPONSE,
    MutationKind.EMPTY_RESPONSE,
    MutationKind.TYPE_CHANGE,
    MutationKind.FORMAT_DISRUPTION,
)

KIND_TITLES: dict[MutationKind, str] = {
    MutationKind.FIELD_ADDITION: "Field Addition",
    MutationKind.FIELD_REMOVAL: "Field Removal",
    MutationKind.MALFORMED_RESPONSE: "Malformed Response",
    MutationKind.EMPTY_RESPONSE: "Empty Response",
    MutationKind.TYPE_CHANGE: "Changing Data Type",
    MutationKind.FORMAT_DISRUPTION: "Format Disruption",
}


class SemanticValidity(str, enum.Enum):
    PRESERVED = "preserved"
    INTENTIONALLY_BROKEN = "intentionally_broken"
    EMPTIED = "emptied"


class MutationFailed(Exception):
    """Base for every way a mutation can refuse to apply."""


class NothingToMutate(MutationFailed):
    """The document has no position this operator could act on."""


class TargetNotEligible(MutationFailed):
    """An explicitly requested target does not exist or has the wrong shape."""


class EscalationExhausted(MutationFailed):
    """The escalation level exceeds the number of removable fields."""

    def __init__(self, level: int, available: int):
        super().__init__(f"escalation level {level} exceeds {available} removable fields")
        self.level = level
        self.available = available


class InvalidMutationSpec(MutationFailed):
    """The mutation description itself is malformed."""


# ---------------------------------------------------------------------------
# Specs and outcomes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MutationSpec:
    """A serializable description of one mutation to perform.

    Fields not used by a given kind are carried along untouched so a spec
    can be round-tripped through storage without loss.
    """

    kind: MutationKind
    targets: tuple[FieldPath, ...] = ()
    escalation_level: int | None = None
    added_count: int = 1
    status_override: int | None = None
    seed: int = 0


_SPEC_KEYS = {"kind", "targets", "escalation_level", "added_count", "status_override", "seed"}


def spec_to_dict(spec: MutationSpec) -> dict:
    out: dict = {"kind": spec.kind.value}
    if spec.targets:
        out["targets"] = [p.render() for p in spec.targets]
    if spec.escalation_level is not None:
        out["escalation_level"] = spec.escalation_level
    if spec.added_count != 1:
        out["added_count"] = spec.added_count
    if spec.status_override is not None:
        out["status_override"] = spec.status_override
    if spec.seed != 0:
        out["seed"] = spec.seed
    return out


def spec_from_dict(data: dict) -> MutationSpec:
    """Strict decoder: unknown keys and bad shapes are errors, not warnings."""
    if not isinstance(data, dict):
        raise InvalidMutationSpec(f"mutation spec must be an object, got {type(data).__name__}")
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        raise InvalidMutationSpec(f"unknown mutation spec fields: {sorted(unknown)}")
    if "kind" not in data:
        raise InvalidMutationSpec("mutation spec requires 'kind'")
    try:
        kind = MutationKind(data["kind"])
    except ValueError:
        raise InvalidMutationSpec(f"unknown mutation kind: {data['kind']!r}") from None

    raw_targets = data.get("targets", [])
    if not isinstance(raw_targets, list) or not all(isinstance(t, str) for t in raw_targets):
        raise InvalidMutationSpec("'targets' must be a list of path strings")
    try:
        targets = tuple(parse_path(t) for t in raw_targets)
    except ValueError as exc:
        raise InvalidMutationSpec(f"bad target path: {exc}") from None

    level = data.get("escalation_level")
    if level is not None and (not isinstance(level, int) or isinstance(level, bool) or level < 1):
        raise InvalidMutationSpec("'escalation_level' must be a positive integer")
    added = data.get("added_count", 1)
    if not isinstance(added, int) or isinstance(added, bool) or added < 1:
        raise InvalidMutationSpec("'added_count' must be a positive integer")
    status = data.get("status_override")
    if status is not None and (
        not isinstance(status, int) or isinstance(status, bool) or not 100 <= status <= 599
    ):
        raise InvalidMutationSpec("'status_override' must be an HTTP status code")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise InvalidMutationSpec("'seed' must be an integer")

    return MutationSpec(
        kind=kind,
        targets=targets,
        escalation_level=level,
        added_count=added,
        status_override=status,
        seed=seed,
    )


@dataclass(frozen=True)
class MutationOutcome:
    body: bytes
    status: int
    headers_delta: dict[str, str]
    applied_targets: tuple[FieldPath, ...]
    semantic_validity: SemanticValidity


# ---------------------------------------------------------------------------
# Tree rebuilding (shared by removal and type change)
# ---------------------------------------------------------------------------

_REMOVE = object()


def _rebuild(tree: DocumentTree, edits: dict[str, object]) -> DocumentTree:
    """Rebuild a tree applying {rendered path: replacement | _REMOVE}.

    All paths are interpreted against the input tree, so a batch of edits
    can never invalidate each other's addresses.
    """

    def walk_json(node: Node, path: FieldPath) -> Node:
        if isinstance(node, ObjectNode):
            entries = []
            for key, value in node.entries:
                child_path = path.child(Step(key))
                edit = edits.get(child_path.render())
                if edit is _REMOVE:
                    continue
                if edit is not None:
                    entries.append((key, edit))
                else:
                    entries.append((key, walk_json(value, child_path)))
            return ObjectNode(tuple(entries))
        if isinstance(node, ArrayNode):
            items = []
            for i, item in enumerate(node.items):
                child_path = path.child(Step(str(i)))
                edit = edits.get(child_path.render())
                if edit is _REMOVE:
                    continue
                if edit is not None:
                    items.append(edit)
                else:
                    items.append(walk_json(item, child_path))
            return ArrayNode(tuple(items))
        return node

    def walk_xml(node: ElementNode, path: FieldPath) -> ElementNode:
        attrs = []
        for name, value in node.attrs:
            edit = edits.get(path.child(Attr(name)).render())
            if edit is _REMOVE:
                continue
            if isinstance(edit, AttributeNode):
                attrs.append((name, edit.value))
            else:
                attrs.append((name, value))
        children: list[Node] = []
        counts: dict[str, int] = {}
        for child in node.children:
            if not isinstance(child, ElementNode):
                children.append(child)
                continue
            counts[child.name] = counts.get(child.name, 0) + 1
            child_path = path.child(Step(child.name, counts[child.name]))
            edit = edits.get(child_path.render())
            if edit is _REMOVE:
                continue
            if isinstance(edit, ElementNode):
                children.append(edit)
            else:
                children.append(walk_xml(child, child_path))
        return ElementNode(node.name, tuple(attrs), tuple(children))

    if tree.format is DocumentFormat.JSON:
        root_edit = edits.get("/")
        if root_edit is not None and root_edit is not _REMOVE:
            return DocumentTree(tree.format, root_edit)  # type: ignore[arg-type]
        return DocumentTree(tree.format, walk_json(tree.root, FieldPath(())))
    assert isinstance(tree.root, ElementNode)
    root_path = FieldPath((Step(tree.root.name),))
    root_edit = edits.get(root_path.render())
    if isinstance(root_edit, ElementNode):
        return DocumentTree(tree.format, root_edit)
    return DocumentTree(tree.format, walk_xml(tree.root, root_path))


# ---------------------------------------------------------------------------
# Field addition
# ---------------------------------------------------------------------------

def _filler_names(tree: DocumentTree, count: int) -> list[str]:
    """Names __mutant_1.. skipping any that already exist at the root."""
    taken: set[str] = set()
    root = tree.root
    if isinstance(root, ObjectNode):
        taken = {k for k, _ in root.entries}
    elif isinstance(root, ElementNode):
        taken = {c.name for c in root.element_children()}
    names = []
    k = 1
    while len(names) < count:
        name = f"__mutant_{k}"
        if name not in taken:
            names.append(name)
        k += 1
    return names


def add_fields(
    tree: DocumentTree, count: int = 1, seed: int = 0
) -> tuple[DocumentTree, tuple[FieldPath, ...]]:
    """Append `count` irrelevant fields to the root container."""
    if count < 1:
        raise InvalidMutationSpec("added_count must be a positive integer")
    rng = random.Random(seed)
    values = [f"filler-{rng.getrandbits(32):08x}" for _ in range(count)]
    root = tree.root

    if isinstance(root, ObjectNode):
        names = _filler_names(tree, count)
        entries = root.entries + tuple(
            (name, StringNode(value)) for name, value in zip(names, values)
        )
        paths = tuple(FieldPath((Step(name),)) for name in names)
        return DocumentTree(tree.format, ObjectNode(entries)), paths

    if isinstance(root, ArrayNode):
        start = len(root.items)
        items = root.items + tuple(
            StringNode(f"__mutant_{start + i + 1}:{value}") for i, value in enumerate(values)
        )
        paths = tuple(FieldPath((Step(str(start + i)),)) for i in range(count))
        return DocumentTree(tree.format, ArrayNode(items)), paths

    if isinstance(root, ElementNode):
        names = _filler_names(tree, count)
        children = root.children + tuple(
            ElementNode(name, (), (TextNode(value),)) for name, value in zip(names, values)
        )
        new_root = ElementNode(root.name, root.attrs, children)
        paths = tuple(FieldPath((Step(root.name), Step(name))) for name in names)
        return DocumentTree(tree.format, new_root), paths

    raise NothingToMutate("a bare scalar document has no container to extend")


# ---------------------------------------------------------------------------
# Field removal
# ---------------------------------------------------------------------------

def _check_removable(tree: DocumentTree, target: FieldPath) -> None:
    if not target.segments:
        raise TargetNotEligible("the document root cannot be removed")
    if resolve(tree, target) is None:
        raise TargetNotEligible(f"no field at {target.render()}")
    last = target.segments[-1]
    if isinstance(last, Attr):
        return
    if tree.format is DocumentFormat.XML:
        if len(target.segments) == 1:
            raise TargetNotEligible("the root element cannot be removed")
        return
    parent = resolve(tree, target.parent())
    if not isinstance(parent, ObjectNode):
        raise TargetNotEligible(
            f"{target.render()} is not an object member; array items are not fields"
        )


def remove_fields(
    tree: DocumentTree,
    targets: tuple[FieldPath, ...] = (),
    escalation_level: int | None = None,
) -> tuple[DocumentTree, tuple[FieldPath, ...]]:
    """Remove fields, addressing everything against the unmodified tree.

    Exactly one of `targets` / `escalation_level` selects what goes:
    escalation level k removes the first k entries of the canonical
    removal-target enumeration.
    """
    if escalation_level is not None and targets:
        raise InvalidMutationSpec("targets and escalation_level are mutually exclusive")
    if escalation_level is not None:
        if escalation_level < 1:
            raise InvalidMutationSpec("escalation_level must be a positive integer")
        ladder = enumerate_removal_targets(tree)
        if escalation_level > len(ladder):
            raise EscalationExhausted(escalation_level, len(ladder))
        chosen = tuple(ladder[:escalation_level])
    else:
        if not targets:
            raise InvalidMutationSpec("field removal requires targets or escalation_level")
        for t in targets:
            _check_removable(tree, t)
        chosen = targets

    edits: dict[str, object] = {t.render(): _REMOVE for t in chosen}
    return _rebuild(tree, edits), chosen


# ---------------------------------------------------------------------------
# Type change
# ---------------------------------------------------------------------------

_JSON_INT_RE = re.compile(r"-?(0|[1-9][0-9]*)")
_NUMERIC_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")


def _json_type_changed(node: Node) -> Node | None:
    if isinstance(node, NumberNode):
        return StringNode(node.lexeme)
    if isinstance(node, StringNode) and _JSON_INT_RE.fullmatch(node.value):
        return NumberNode(node.value)
    return None


def _element_text(node: ElementNode) -> str | None:
    """Concatenated text if the element has text content and no child elements."""
    if not node.children or any(isinstance(c, ElementNode) for c in node.children):
        return None
    return "".join(c.text for c in node.children if isinstance(c, TextNode))


def _xml_type_changed(node: Node) -> Node | None:
    if isinstance(node, AttributeNode):
        if _NUMERIC_RE.fullmatch(node.value.strip()) and node.value.strip():
            return AttributeNode(node.name, node.value + "X")
        return None
    if isinstance(node, ElementNode):
        text = _element_text(node)
        if text is not None and text.strip() and _NUMERIC_RE.fullmatch(text.strip()):
            return ElementNode(node.name, node.attrs, (TextNode(text + "X"),))
    return None


def change_type(
    tree: DocumentTree, targets: tuple[FieldPath, ...] = ()
) -> tuple[DocumentTree, tuple[FieldPath, ...]]:
    """Flip value types: JSON numbers become strings, integer-looking JSON
    strings become numbers, numeric XML text or attributes stop being numeric.

    With no explicit targets the first eligible value in document order is
    changed."""
    changer = _json_type_changed if tree.format is DocumentFormat.JSON else _xml_type_changed

    if targets:
        edits: dict[str, object] = {}
        applied = []
        for target in targets:
            node = resolve(tree, target)
            if node is None:
                raise TargetNotEligible(f"no value at {target.render()}")
            changed = changer(node)
            if changed is None:
                raise TargetNotEligible(f"value at {target.render()} has no type flip")
            edits[target.render()] = changed
            applied.append(target)
        return _rebuild(tree, edits), tuple(applied)

    for path, node in walk_values(tree):
        changed = changer(node)
        if changed is not None:
            return _rebuild(tree, {path.render(): changed}), (path,)
    raise NothingToMutate("no value in the document has an applicable type flip")


def apply_marker(tree: DocumentTree, path: FieldPath, sentinel: str) -> DocumentTree:
    """Overwrite the value at `path` with a sentinel string.

    Not one of the six operators: this is the cache-probe edit, used to make
    a served response distinguishable from a cached copy of it.
    """
    node = resolve(tree, path)
    if node is None:
        raise TargetNotEligible(f"no value at {path.render()} to mark")
    replacement: Node
    if tree.format is DocumentFormat.JSON:
        replacement = StringNode(sentinel)
    elif isinstance(node, AttributeNode):
        replacement = AttributeNode(node.name, sentinel)
    elif isinstance(node, ElementNode):
        replacement = ElementNode(node.name, node.attrs, (TextNode(sentinel),))
    else:
        raise TargetNotEligible(f"value at {path.render()} cannot carry a marker")
    return _rebuild(tree, {path.render(): replacement})


# ---------------------------------------------------------------------------
# Malformed response (single byte deletion)
# ---------------------------------------------------------------------------

def _first_string_value(body: bytes) -> tuple[int, FieldPath]:
    """Index of the closing quote of the first string *value*, plus its path.

    A string is a value exactly when the next non-space character is not a
    colon. Assumes the body already parsed as JSON.
    """
    text = body.decode("utf-8")
    # frames: ["obj", pending_key] or ["arr", index]
    stack: list[list] = []
    i = 0
    n = len(text)

    def current_path() -> FieldPath:
        segs = []
        for frame in stack:
            if frame[0] == "obj":
                segs.append(Step(frame[1]))
            else:
                segs.append(Step(str(frame[1])))
        return FieldPath(tuple(segs))

    while i < n:
        ch = text[i]
        if ch in " \t\n\r":
            i += 1
        elif ch == "{":
            stack.append(["obj", None])
            i += 1
        elif ch == "[":
            stack.append(["arr", 0])
            i += 1
        elif ch in "}]":
            stack.pop()
            i += 1
        elif ch == ",":
            if stack and stack[-1][0] == "arr":
                stack[-1][1] += 1
            i += 1
        elif ch == ":":
            i += 1
        elif ch == '"':
            start = i
            i += 1
            value_chars: list[str] = []
            while text[i] != '"':
                if text[i] == "\\":
                    value_chars.append(text[i : i + 2])
                    i += 2
                else:
                    value_chars.append(text[i])
                    i += 1
            close = i
            i += 1
            j = i
            while j < n and text[j] in " \t\n\r":
                j += 1
            if j < n and text[j] == ":":
                # a key: remember it for the path of the value that follows
                stack[-1][1] = _unquote(text[start : close + 1])
            else:
                byte_index = len(text[:close].encode("utf-8"))
                return byte_index, current_path()
        else:
            # number or literal: consume to the next delimiter
            while i < n and text[i] not in " \t\n\r,:]}":
                i += 1
    raise NothingToMutate("document contains no string value to truncate")


def _unquote(quoted: str) -> str:
    import json as _json

    return _json.loads(quoted)


def _xml_root_tag_end(body: bytes) -> int:
    """Byte index of the '>' closing the root element's start tag."""
    parser = _expat.ParserCreate()
    parser.ordered_attributes = True
    offsets: list[int] = []

    def start(_name: str, _attrs: list) -> None:
        if not offsets:
            offsets.append(parser.CurrentByteIndex)

    parser.StartElementHandler = start
    parser.Parse(body, True)
    assert offsets, "parsed XML must have a root element"
    i = offsets[0]
    quote = ""
    while i < len(body):
        ch = body[i : i + 1]
        if quote:
            if ch == quote.encode():
                quote = ""
        elif ch in (b'"', b"'"):
            quote = ch.decode()
        elif ch == b">":
            return i
        i += 1
    raise AssertionError("unterminated start tag in parsed XML")


def malform(body: bytes, fmt: DocumentFormat) -> tuple[bytes, tuple[FieldPath, ...]]:
    """Delete exactly one byte so the body no longer parses.

    JSON loses the closing quote of its first string value; XML loses the
    '>' of the root element's start tag.
    """
    parse(body, fmt)  # only damage a body that was well-formed to begin with
    if fmt is DocumentFormat.JSON:
        index, path = _first_string_value(body)
        return body[:index] + body[index + 1 :], (path,)
    index = _xml_root_tag_end(body)
    tree = parse(body, fmt)
    assert isinstance(tree.root, ElementNode)
    return body[:index] + body[index + 1 :], (FieldPath((Step(tree.root.name),)),)


# ---------------------------------------------------------------------------
# Format disruption (whitespace insertion)
# ---------------------------------------------------------------------------

def _json_token_starts(body: bytes) -> list[int]:
    text = body.decode("utf-8")
    # map character index to byte index lazily at the end
    char_starts: list[int] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\n\r":
            i += 1
            continue
        char_starts.append(i)
        if ch == '"':
            i += 1
            while text[i] != '"':
                i += 2 if text[i] == "\\" else 1
            i += 1
        elif ch in "{}[],:":
            i += 1
        else:
            while i < n and text[i] not in " \t\n\r,:]}":
                i += 1
    # convert char indices to byte indices in one pass
    byte_of: dict[int, int] = {}
    b = 0
    for idx, c in enumerate(text):
        byte_of[idx] = b
        b += len(c.encode("utf-8"))
    byte_of[n] = b
    return [byte_of[c] for c in char_starts]


def _disrupt_json(body: bytes, seed: int) -> bytes:
    rng = random.Random(seed)
    points = _json_token_starts(body) + [len(body)]
    insertions = []
    for _ in points:
        insertions.append("".join(rng.choice(" \n\t") for _ in range(rng.randint(0, 4))))
    if not any(insertions):
        insertions[0] = "\n"
    out = bytearray()
    previous = 0
    for point, ws in zip(points, insertions):
        out += body[previous:point]
        out += ws.encode("ascii")
        previous = point
    out += body[previous:]
    return bytes(out)


def _xml_insertion_points(body: bytes) -> list[tuple[int, int]]:
    """(byte offset, depth) pairs where indentation can be inserted.

    Eligible positions are child start tags and the closing tag of elements
    whose text content is entirely whitespace; inserting there only grows
    whitespace-only text runs, which comparison already ignores.
    """
    parser = _expat.ParserCreate()
    parser.ordered_attributes = True
    parser.buffer_text = True

    # per open element: [child_start_offsets, has_nonspace_text, child_count]
    stack: list[list] = []
    points: list[tuple[int, int]] = []

    def start(_name: str, _attrs: list) -> None:
        if stack:
            stack[-1][0].append((parser.CurrentByteIndex, len(stack)))
            stack[-1][2] += 1
        stack.append([[], False, 0])

    def end(_name: str) -> None:
        offsets, has_text, child_count = stack.pop()
        if child_count > 0 and not has_text:
            points.extend(offsets)
            # the end-tag offset is only trustworthy for elements with
            # children, which can never have been self-closing
            points.append((parser.CurrentByteIndex, len(stack)))

    def chars(text: str) -> None:
        if stack and text.strip():
            stack[-1][1] = True

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    parser.Parse(body, True)
    return sorted(points)


def _disrupt_xml(body: bytes) -> bytes:
    points = _xml_insertion_points(body)
    if not points:
        return body + b"\n"
    out = bytearray()
    previous = 0
    for offset, depth in points:
        out += body[previous:offset]
        out += b"\n" + b"  " * depth
        previous = offset
    out += body[previous:]
    return bytes(out)


def disrupt_format(body: bytes, fmt: DocumentFormat, seed: int = 0) -> bytes:
    """Insert whitespace without changing what the document means.

    The output is never shorter than the input and parses to a tree equal
    to the original. The seed varies the JSON whitespace draws; XML
    disruption is a deterministic re-indentation.
    """
    parse(body, fmt)
    if fmt is DocumentFormat.JSON:
        return _disrupt_json(body, seed)
    return _disrupt_xml(body)


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------

def apply_mutation(
    baseline: bytes,
    fmt: DocumentFormat,
    spec: MutationSpec,
    baseline_status: int = 200,
) -> MutationOutcome:
    """Apply one mutation spec to a baseline body.

    Deterministic: identical inputs produce identical outcomes. Raises a
    MutationFailed subclass when the spec cannot apply; the empty-response
    operator is the only one that accepts an opaque body.
    """
    status = spec.status_override if spec.status_override is not None else baseline_status

    if spec.kind is MutationKind.EMPTY_RESPONSE:
        return MutationOutcome(
            body=b"",
            status=status,
            headers_delta={"Content-Length": "0"},
            applied_targets=(),
            semantic_validity=SemanticValidity.EMPTIED,
        )

    if fmt is DocumentFormat.OPAQUE:
        raise TargetNotEligible(f"{spec.kind.value} requires a JSON or XML body")

    if spec.kind is MutationKind.MALFORMED_RESPONSE:
        body, applied = malform(baseline, fmt)
        validity = SemanticValidity.INTENTIONALLY_BROKEN
    elif spec.kind is MutationKind.FORMAT_DISRUPTION:
        body = disrupt_format(baseline, fmt, spec.seed)
        applied = ()
        validity = SemanticValidity.PRESERVED
    elif spec.kind is MutationKind.FIELD_ADDITION:
        tree, applied = add_fields(parse(baseline, fmt), spec.added_count, spec.seed)
        body = serialize(tree)
        validity = SemanticValidity.PRESERVED
    elif spec.kind is MutationKind.FIELD_REMOVAL:
        tree, applied = remove_fields(parse(baseline, fmt), spec.targets, spec.escalation_level)
        body = serialize(tree)
        validity = SemanticValidity.INTENTIONALLY_BROKEN
    elif spec.kind is MutationKind.TYPE_CHANGE:
        tree, applied = change_type(parse(baseline, fmt), spec.targets)
        body = serialize(tree)
        validity = SemanticValidity.INTENTIONALLY_BROKEN
    else:  # pragma: no cover - the enum is closed
        raise InvalidMutationSpec(f"unhandled kind {spec.kind}")

    return MutationOutcome(
        body=body,
        status=status,
        headers_delta={"Content-Length": str(len(body))},
        applied_targets=applied,
        semantic_validity=validity,
    )

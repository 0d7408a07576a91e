"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written against different stdlib surfaces
(json.loads with plain hooks, xml.dom.minidom) and different code shapes
than the implementations under test, so agreement is meaningful.
"""

from __future__ import annotations

import json
from decimal import Decimal
from xml.dom import minidom


def escape_path_name(name: str) -> str:
    if name == "":
        return "~4"
    return (
        name.replace("~", "~0")
        .replace("/", "~1")
        .replace("[", "~2")
        .replace("@", "~3")
    )


class _Pairs(list):
    """Distinguishes parsed objects from parsed arrays."""


# --- removal-target enumeration --------------------------------------------

def removal_paths_json(body: bytes) -> list[str]:
    """Post-order, leaf-first path strings of all object members."""
    value = json.loads(body, object_pairs_hook=_Pairs)
    out: list[str] = []

    def visit(v: object, prefix: str) -> None:
        if isinstance(v, _Pairs):
            for key, child in v:
                child_prefix = prefix + "/" + escape_path_name(key)
                visit(child, child_prefix)
                out.append(child_prefix)
        elif isinstance(v, list):
            for i, item in enumerate(v):
                visit(item, prefix + "/" + str(i))

    visit(value, "")
    return out


def removal_paths_xml(body: bytes) -> list[str]:
    """Post-order removal paths (attributes first, element after subtree).

    Only valid for namespace-free documents: minidom reorders xmlns
    attributes and resolves prefixes, which the implementation under test
    deliberately does not.
    """
    doc = minidom.parseString(body)
    out: list[str] = []

    def visit(element, prefix: str, removable: bool) -> None:
        for attr in element.attributes.values():
            out.append(prefix + "@" + escape_path_name(attr.name))
        seen: dict[str, int] = {}
        for child in element.childNodes:
            if child.nodeType != child.ELEMENT_NODE:
                continue
            seen[child.tagName] = seen.get(child.tagName, 0) + 1
            n = seen[child.tagName]
            suffix = f"[{n}]" if n > 1 else ""
            visit(child, prefix + "/" + escape_path_name(child.tagName) + suffix, True)
        if removable:
            out.append(prefix)

    root = doc.documentElement
    visit(root, "/" + escape_path_name(root.tagName), False)
    return out


# --- semantic equality ------------------------------------------------------

def json_semantically_equal(a: bytes, b: bytes) -> bool:
    """Key order free, array order significant, numbers by value."""

    def canon(v: object) -> object:
        if isinstance(v, dict):
            return {k: canon(x) for k, x in v.items()}
        if isinstance(v, list):
            return [canon(x) for x in v]
        if isinstance(v, bool):
            return ("bool", v)
        if isinstance(v, Decimal):
            return ("num", v)
        return v

    def load(raw: bytes) -> object:
        return canon(json.loads(raw, parse_float=Decimal, parse_int=Decimal))

    return load(a) == load(b)


# --- brute-force field removal (escalation-ladder checks) -------------------

def brute_force_removed_json(body: bytes, paths: list[str]) -> object:
    """Apply removals by path string, all resolved against the original.

    Returns the resulting plain-Python value (dicts/lists), independent of
    the package's mark-then-sweep implementation.
    """
    value = json.loads(body)

    located: list[tuple[object, object]] = []  # (container, key-or-index)
    for path in paths:
        if path == "/":
            continue
        node: object = value
        holder: tuple[object, object] | None = None
        ok = True
        for raw in _split_path(path):
            name = _unescape(raw)
            if isinstance(node, dict):
                if name not in node:
                    ok = False
                    break
                holder = (node, name)
                node = node[name]
            elif isinstance(node, list):
                if not name.isdigit() or int(name) >= len(node):
                    ok = False
                    break
                holder = (node, int(name))
                node = node[int(name)]
            else:
                ok = False
                break
        if ok and holder is not None:
            located.append(holder)

    # dict keys pop directly; list indices must delete high-to-low
    dict_removals = [(c, k) for c, k in located if isinstance(c, dict)]
    list_removals = [(c, k) for c, k in located if isinstance(c, list)]
    for container, key in dict_removals:
        container.pop(key, None)
    list_removals.sort(key=lambda ck: ck[1], reverse=True)  # type: ignore[arg-type,return-value]
    for container, index in list_removals:
        if index < len(container):  # type: ignore[arg-type]
            del container[index]  # type: ignore[index]
    return value


def _split_path(path: str) -> list[str]:
    assert path.startswith("/")
    parts: list[str] = []
    cur: list[str] = []
    i = 1
    while i < len(path):
        ch = path[i]
        if ch == "~":
            cur.append(path[i : i + 2])
            i += 2
        elif ch == "/":
            parts.append("".join(cur))
            cur = []
            i += 1
        else:
            cur.append(ch)
            i += 1
    parts.append("".join(cur))
    return parts


def _unescape(piece: str) -> str:
    table = {"0": "~", "1": "/", "2": "[", "3": "@", "4": ""}
    out: list[str] = []
    i = 0
    while i < len(piece):
        if piece[i] == "~":
            out.append(table[piece[i + 1]])
            i += 2
        else:
            out.append(piece[i])
            i += 1
    return "".join(out)

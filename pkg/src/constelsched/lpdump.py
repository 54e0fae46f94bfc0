"""
Plain-text listing of a LinearProgram, for debugging and for replaying a model in tests.

    # <comment>                             optional provenance lines, ignored on reading
    LP "<name>" VARS <n> UB <rows> EQ <rows>
    OBJ
    <j> <c_j>                               nonzero costs only
    BOUNDS
    <j> <lb> <ub> B|C                       B = integer column, C = continuous
    ROWS
    <TAG> (<key ints>) LE|EQ <rhs> : <j>:<a_j> ...
    END

Inequality rows come first, in matrix order, then equality rows. Numbers are written with repr() so
a dump reads back bit-exactly; bounds may be inf/-inf. Untagged rows use the tag ROW.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from pyparsing import (Group, Literal, ParseException, QuotedString, Regex, Suppress, ZeroOrMore,
                       pyparsing_common, python_style_comment)

from .defs import RowTag
from .errors import SchemaError
from .model import LinearProgram

logger = logging.getLogger(__name__)

UNTAGGED = "ROW"

real = Regex(r"[+-]?(?:inf|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)").set_parse_action(lambda t: float(t[0]))
index = pyparsing_common.integer

header = (Suppress("LP") + QuotedString('"')("name") + Suppress("VARS") + index("n_vars") +
          Suppress("UB") + index("n_ub") + Suppress("EQ") + index("n_eq"))
obj_section = Suppress("OBJ") + Group(ZeroOrMore(Group(index + real)))("obj")
bound = Group(index + real + real + (Literal("B") | Literal("C")))
bounds_section = Suppress("BOUNDS") + Group(ZeroOrMore(bound))("bounds")
tag = Regex(r"[A-Z_]+")
key = Group(Suppress("(") + ZeroOrMore(index) + Suppress(")"))
entry = Group(index + Suppress(":") + real)
row = Group(tag("tag") + key("key") + (Literal("LE") | Literal("EQ"))("sense") + real("rhs") +
            Suppress(":") + Group(ZeroOrMore(entry))("entries"))
rows_section = Suppress("ROWS") + Group(ZeroOrMore(row))("rows")
lp_file = header + obj_section + bounds_section + rows_section + Suppress("END")
lp_file.ignore(python_style_comment)


def _tag_name(tag: int) -> str:
    return RowTag(tag).name if tag >= 0 else UNTAGGED


def _row_line(tag: int, key: tuple[int, ...], sense: str, rhs: float, row: sp.csr_matrix) -> str:
    order = np.argsort(row.indices)
    entries = " ".join(f"{int(j)}:{float(v)!r}" for j, v in zip(row.indices[order], row.data[order]) if v != 0.0)
    return f"{_tag_name(tag)} ({' '.join(str(k) for k in key)}) {sense} {float(rhs)!r} : {entries}"


def format_lp(lp: LinearProgram, name: str = "model", comments: Iterable[str] = ()) -> str:
    lines = [f"# {comment}" for comment in comments]
    lines += [f'LP "{name}" VARS {lp.n_vars} UB {lp.n_ub} EQ {lp.n_eq}', "OBJ"]
    lines += [f"{j} {float(lp.c[j])!r}" for j in np.flatnonzero(lp.c)]
    lines.append("BOUNDS")
    lines += [f"{j} {float(lp.lb[j])!r} {float(lp.ub[j])!r} {'B' if lp.integrality[j] else 'C'}"
              for j in range(lp.n_vars)]
    lines.append("ROWS")
    lines += [_row_line(int(lp.tags_ub[r]), lp.keys_ub[r], "LE", lp.b_ub[r], lp.A_ub.getrow(r))
              for r in range(lp.n_ub)]
    lines += [_row_line(int(lp.tags_eq[r]), lp.keys_eq[r], "EQ", lp.b_eq[r], lp.A_eq.getrow(r))
              for r in range(lp.n_eq)]
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_lp(lp: LinearProgram, path: Path | str, name: str = "model", comments: Iterable[str] = ()) -> None:
    Path(path).write_text(format_lp(lp, name, comments))
    logger.info(f"Wrote {lp} to {path}")


def parse_lp(text: str) -> LinearProgram:
    try:
        result = lp_file.parse_string(text, parse_all=True)
    except ParseException as e:
        raise SchemaError(f"line {e.lineno}", e.msg) from None

    nv = result["n_vars"]
    c = np.zeros(nv)
    for j, value in result["obj"]:
        c[j] = value
    lb, ub, integrality = np.zeros(nv), np.ones(nv), np.zeros(nv, dtype=bool)
    for j, lo, hi, kind in result["bounds"]:
        lb[j], ub[j], integrality[j] = lo, hi, kind == "B"

    parsed: dict[str, list] = {"LE": [], "EQ": []}
    for r in result["rows"]:
        name = r["tag"]
        if name != UNTAGGED and name not in RowTag.__members__:
            raise SchemaError("tag", f"unknown row tag {name}")
        cols, vals = [], []
        for j, value in r["entries"]:
            if not 0 <= j < nv:
                raise SchemaError("entries", f"column {j} out of range for {nv} columns")
            cols.append(j)
            vals.append(value)
        tag = RowTag[name].value if name != UNTAGGED else -1
        parsed[r["sense"]].append((cols, vals, r["rhs"], tag, tuple(r["key"])))

    if len(parsed["LE"]) != result["n_ub"] or len(parsed["EQ"]) != result["n_eq"]:
        raise SchemaError("ROWS", f"header announces {result['n_ub']} LE and {result['n_eq']} EQ rows, "
                                  f"found {len(parsed['LE'])} and {len(parsed['EQ'])}")

    def block(rows: list) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray, list]:
        if not rows:
            return sp.csr_matrix((0, nv)), np.zeros(0), np.zeros(0, dtype=np.int8), []
        cols, vals, b, tags, keys = zip(*rows)
        row_index = np.repeat(np.arange(len(rows)), [len(c) for c in cols])
        A = sp.csr_matrix((np.concatenate([np.asarray(v, dtype=float) for v in vals]),
                           (row_index, np.concatenate([np.asarray(c, dtype=np.int64) for c in cols]))),
                          shape=(len(rows), nv))
        return A, np.array(b), np.array(tags, dtype=np.int8), list(keys)

    A_ub, b_ub, tags_ub, keys_ub = block(parsed["LE"])
    A_eq, b_eq, tags_eq, keys_eq = block(parsed["EQ"])
    return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb, ub, integrality, tags_ub, tags_eq, keys_ub, keys_eq)


def read_lp(path: Path | str) -> LinearProgram:
    lp = parse_lp(Path(path).read_text())
    logger.info(f"Read {lp} from {path}")
    return lp

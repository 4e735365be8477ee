"""The single CSV dialect used for every output: ``;`` separator, ``.``
decimal point, LF line endings, no trailing separator. Floats are written
with six decimals so reruns are byte-identical."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Sequence

SEP = ";"
FLOAT_FORMAT = "{:.6f}"


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return FLOAT_FORMAT.format(value)
    if hasattr(value, "item"):  # numpy scalar
        return _cell(value.item())
    text = str(value)
    if SEP in text or "\n" in text:
        raise ValueError(f"cell {text!r} contains a separator or newline")
    return text


def format_rows(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [SEP.join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row {row!r} has {len(row)} cells, header has {len(header)}")
        lines.append(SEP.join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_rows(header, rows))
    return path


def read_csv(path) -> tuple[List[str], List[List[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return lines[0].split(SEP), [line.split(SEP) for line in lines[1:] if line]

"""Regenerate the CSV golden files under tests/golden.

Only run this after a deliberate format or numerics change, and review the
diff before committing.
"""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from golden_cases import GOLDENS  # noqa: E402


def main() -> None:
    out = ROOT / "tests" / "golden"
    out.mkdir(exist_ok=True)
    for name, make in GOLDENS.items():
        (out / name).write_bytes(make().encode("utf-8"))
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()

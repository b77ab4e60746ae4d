"""Regenerate the star and maple point sets shipped in ensemble_pocs/data.

Each shape is 50 planar points on a closed curve, ordered by polar angle.
The curves only need to be fixed and distinct; nothing downstream depends on
their exact outline.
"""

import argparse
from pathlib import Path

import numpy as np

COUNT = 50


def star(theta):
    r = 1.0 + 0.5 * np.cos(5 * theta)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def maple(theta):
    r = (1.0 + 0.3 * np.sin(3 * theta)) * (1.0 + 0.1 * np.cos(15 * theta))
    return np.column_stack([r * np.cos(theta), r * np.sin(theta) + 0.5])


def write(path: Path, points: np.ndarray):
    lines = ["x1,x2"] + [f"{x:.17g},{y:.17g}" for x, y in points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def main():
    default = Path(__file__).resolve().parents[1] / "src" / "ensemble_pocs" / "data"
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=default)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    theta = np.linspace(0.0, 2.0 * np.pi, COUNT, endpoint=False)
    write(args.out / "star.csv", star(theta))
    write(args.out / "maple.csv", maple(theta))


if __name__ == "__main__":
    main()

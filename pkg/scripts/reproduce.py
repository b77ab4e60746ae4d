"""Run every shipped scenario and print one summary row per run.

Artifacts land under ``--out/<scenario>/`` together with the plotdata tables.
Exit status is the largest scenario exit code.
"""

import argparse
import logging
import time
from pathlib import Path

from ensemble_pocs.cli import emit_plotdata, run_scenario
from ensemble_pocs.scenario import parse_scenario, shipped_examples


def headline(summary: dict) -> str:
    if "sweep" in summary:
        rows = summary["sweep"]
        return "rms error by bound " + ", ".join(f"{r['bound']:g}: {r['rms_terminal_error']:.3g}" for r in rows)
    if summary["solver"] == "bilinear":
        return (
            f"converged {summary['converged']} after {summary['outer_iterations']} outer iterations, "
            f"max error {summary['max_terminal_error']:.3g}"
        )
    text = f"{summary['classification']}, max error {summary['max_terminal_error']:.3g}"
    if "verdict" in summary:
        text += f", verdict {summary['verdict']}"
    return text


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--only", nargs="*", help="scenario names to run (default: all)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    examples = shipped_examples()
    names = args.only or sorted(examples)
    unknown = sorted(set(names) - set(examples))
    if unknown:
        parser.error(f"unknown scenarios: {', '.join(unknown)}")
    worst = 0
    for name in names:
        start = time.perf_counter()
        run = run_scenario(parse_scenario(examples[name]), args.out / name)
        emit_plotdata(run.directory)
        worst = max(worst, run.exit_code)
        print(f"{name:28s} exit {run.exit_code}  {time.perf_counter() - start:6.1f} s  {headline(run.summary)}")
    return worst


if __name__ == "__main__":
    raise SystemExit(main())

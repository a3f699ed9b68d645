"""Airfoil trailing section: one actuator, tip down in state 1 and up in state 2.

Takes a few minutes on one core.  Same as
``multimorph optimize src/multimorph/data/airfoil.json --out demos/out/airfoil``.
"""
from pathlib import Path

from multimorph import cli
from multimorph.problems import dump_problem, load_example

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
problem = OUT / "airfoil.json"
problem.write_text(dump_problem(load_example("airfoil")))
raise SystemExit(cli.main(["optimize", str(problem), "--out", str(OUT / "airfoil")]))

"""Centroidal volume-constrained power diagram of an L-shaped domain."""
from pathlib import Path

import numpy as np

from multimorph import export, power

OUT = Path(__file__).parent / "out"

domain = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], float)
# larger cells towards the origin
centres = np.array([[0.5, 0.5], [1.5, 0.5], [0.5, 1.5], [1.5, 0.7], [0.7, 1.5],
                    [0.2, 0.2], [1.8, 0.2], [0.2, 1.8], [1.0, 0.5], [0.5, 1.0]])
phi = 1.0 / (1.0 + np.hypot(*centres.T))
targets = phi / phi.sum() * 3.0

res = power.solve_centroidal_vcpd(domain, targets, seed=0)
d = res.diagram
print(f"converged {res.converged} after {res.iterations} iterations")
print(f"max |V_i - V_t,i| = {np.abs(d.areas - targets).max():.2e}")
OUT.mkdir(exist_ok=True)
(OUT / "l_domain.svg").write_text(export.diagram_svg(d, title="L-domain VCPD"))
print("wrote", OUT / "l_domain.svg")

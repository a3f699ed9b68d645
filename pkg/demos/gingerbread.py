"""Gingerbread man: pushing the head down lowers the left or the right hand,
depending on which cells are heated.  About two minutes on one core."""
from pathlib import Path

import numpy as np

from multimorph import export, opt
from multimorph.problems import load_example

OUT = Path(__file__).parent / "out"

pb = load_example("gingerbread")
res = opt.optimize(pb, progress=lambda row: print(f"phase {row['phase']} iter {row['iteration']:3d}  F {row['F']:.4f}"))
print(f"thresholds {res.thresholds}, R_max {res.R_max:.4g}")
for j, state in enumerate(pb.states):
    for t, u in zip(state, res.J_sim[j]):
        print(f"state {j + 1} {t.name}: target {t.u_T}, simulated {np.round(u, 2)}")
print("connected:", res.connectivity.connected)
OUT.mkdir(exist_ok=True)
(OUT / "gingerbread_layout.svg").write_text(export.diagram_svg(res.layout.diagram, res.design.rho, title="layout"))
for j, st in enumerate(res.states):
    svg = export.deformed_svg(res.layout.mesh, st.u, res.design.rho, res.design.eta[j], title=f"state {j + 1}")
    (OUT / f"gingerbread_state{j + 1}.svg").write_text(svg)
print("wrote SVGs to", OUT)

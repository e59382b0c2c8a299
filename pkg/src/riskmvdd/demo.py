"""A small hand-built diagram over the invasive-hemodynamics feature set.

Useful as a serving/UI demo and as a worked example of OR substitution: the
pulmonary pressures PAS and PCWP are interchangeable on the high-risk path,
so a record missing one can still be scored from the other.
"""

from __future__ import annotations

from .mvdd import AND, GT, LE, OR, Mvdd, MvddBuilder


def build_demo_model() -> Mvdd:
    b = MvddBuilder(k=5, feature_set="invasive-hemodynamics", outcome="DeLvTx")
    t_low = b.terminal(1, "t_low")
    t_female = b.terminal(2, "t_female")
    t_mid = b.terminal(3, "t_mid")
    t_high = b.terminal(4, "t_high")
    t_top = b.terminal(5, "t_top")

    # Substitute node: PCWP stands in for PAS.  Arm order pairs with the PAS
    # node positionally; the pairing is crossed (high PAS ~ low wedge here).
    n_pcwp = b.continuous("PCWP", 33.0, [(GT, AND, t_high), (LE, AND, t_top)], "n_pcwp")
    n_pas = b.continuous("PAS", 74.5, [(LE, OR, n_pcwp), (GT, OR, n_pcwp)], "n_pas")
    n_cpi = b.continuous("CPI", 0.621, [(LE, AND, t_mid), (GT, AND, n_pas)], "n_cpi")
    n_bpsys = b.continuous("BPSYS", 103.5, [(LE, AND, t_low), (GT, AND, n_cpi)], "n_bpsys")
    root = b.categorical(
        "Sex",
        [((1,), ("Male",), AND, n_bpsys), ((0,), ("Female",), AND, t_female)],
        "n_sex",
    )
    return b.build(
        root,
        metadata={
            "source": "hand-built demo",
            "criterion": None,
            "seed": None,
            "fold": None,
            "bands": {str(c): list(v) for c, v in {
                1: (0.0, 0.10),
                2: (0.10, 0.20),
                3: (0.20, 0.30),
                4: (0.30, 0.40),
                5: (0.40, 1.0),
            }.items()},
        },
    )

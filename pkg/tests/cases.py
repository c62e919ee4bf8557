"""True parameter values and fitting boxes per family, shared by the fitting tests."""

import math

from extremo import LAG_SETS, Family

H = [tuple(h) for h in LAG_SETS["H"]]

_AXIS = {"C1": 0.4, "C2": 0.8, "C3": 0.5, "alpha1": 1.5, "alpha2": 1.5, "alpha3": 1.0}
_ALPHA12 = {"alpha1": (1.0, 2.0), "alpha2": (1.0, 2.0)}

FAMILY_CASES = {
    "I": (Family.ISO_FRAC, {"C1": 0.8, "C2": 0.4, "alpha1": 1.5, "alpha2": 1.0}, {}),
    "I-aniso": (
        Family.ISO_FRAC_GEO_ANISO,
        {"C1": 0.8, "C2": 0.4, "alpha1": 1.5, "alpha2": 0.5, "c": 3.0, "phi": math.pi / 4},
        {"alpha1": (1.0, 2.0)},
    ),
    "II": (Family.AXIS_ANISO, dict(_AXIS), _ALPHA12),
    "II-rot": (Family.AXIS_ANISO_ROT, {**_AXIS, "phi": math.pi / 6}, _ALPHA12),
    "III": (Family.TIME_SHIFTED, {**_AXIS, "tau1": 1.0, "tau2": 1.0}, _ALPHA12),
}

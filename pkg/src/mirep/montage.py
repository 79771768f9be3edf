"""Scalp electrode coordinates for the 10-10 system.

Electrode positions are generated analytically on a unit sphere and projected
with the azimuthal-equidistant map (Cz at the origin, the equatorial ring of
the 10% circumference electrodes at radius 1).  The construction is the usual
idealized one: the outer ring carries the Fp/AF7/F7/FT7/T7/... chain at 18
degree azimuth steps, the sagittal midline carries Fpz..Oz at 22.5 degree
steps, and every lateral row (F, FC, C, CP, P, ...) is an arc of the circle
through its two ring endpoints and its midline electrode, subdivided at equal
angles.  Right-hemisphere positions are the exact mirror (x negated bitwise)
of their left counterparts, so mirror symmetry holds to the last ulp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Montage", "canonical_name", "mirror_name", "standard_1010"]


def canonical_name(name: str) -> str:
    """Normalize electrode-name case: 'fcz' -> 'FCz', 'fp1' -> 'Fp1', 't7' -> 'T7'."""
    s = name.strip().upper()
    if not s:
        raise ValueError("empty electrode name")
    if s.startswith("FP"):
        s = "Fp" + s[2:]
    if s.endswith("Z"):
        s = s[:-1] + "z"
    return s


def mirror_name(name: str) -> str:
    """Left-right homologue: C3 <-> C4, T7 <-> T8, Fp1 <-> Fp2; midline maps to itself."""
    s = canonical_name(name)
    if s.endswith("z"):
        return s
    head = s.rstrip("0123456789")
    digits = s[len(head):]
    if not digits:
        return s
    n = int(digits)
    return head + str(n + 1 if n % 2 == 1 else n - 1)


@dataclass(frozen=True)
class Montage:
    """Map from electrode name to 2-D scalp coordinates (unit head radius).

    Coordinates live in the azimuthal-equidistant projection: Cz at (0, 0),
    nose toward +y, left ear toward -x.  All points must stay on or near the
    head disc (radius <= 1.2).
    """

    coords: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: dict[str, tuple[float, float]] = {}
        for name, xy in self.coords.items():
            cname = canonical_name(name)
            if cname in seen:
                raise ValueError(f"duplicate electrode name after case folding: {cname!r}")
            x, y = float(xy[0]), float(xy[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"non-finite coordinates for {cname!r}")
            if x * x + y * y > 1.2 * 1.2 + 1e-12:
                raise ValueError(f"electrode {cname!r} lies outside the head disc: ({x}, {y})")
            seen[cname] = (x, y)
        object.__setattr__(self, "coords", seen)

    def __contains__(self, name: str) -> bool:
        return canonical_name(name) in self.coords

    def position(self, name: str) -> tuple[float, float]:
        cname = canonical_name(name)
        try:
            return self.coords[cname]
        except KeyError:
            raise KeyError(f"electrode {cname!r} not present in montage") from None

    def positions(self, names) -> np.ndarray:
        """(len(names), 2) array of projected coordinates."""
        return np.array([self.position(n) for n in names], dtype=np.float64)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.coords)


# ---------------------------------------------------------------------------
# analytic construction of the standard table
# ---------------------------------------------------------------------------

# outer ring, left half plus midline, azimuth in degrees from nose toward the left ear
_RING = [
    ("Fpz", 0.0), ("Fp1", 18.0), ("AF7", 36.0), ("F7", 54.0), ("FT7", 72.0),
    ("T7", 90.0), ("TP7", 108.0), ("P7", 126.0), ("PO7", 144.0), ("O1", 162.0),
    ("Oz", 180.0),
]

# sagittal midline, arc angle in degrees from Fpz over Cz to Oz
_MIDLINE = [
    ("Fpz", 0.0), ("AFz", 22.5), ("Fz", 45.0), ("FCz", 67.5), ("Cz", 90.0),
    ("CPz", 112.5), ("Pz", 135.0), ("POz", 157.5), ("Oz", 180.0),
]

# lateral rows: (ring endpoint, midline electrode, interior left-side names
# ordered from the endpoint toward the midline)
_ROWS = [
    ("AF7", "AFz", ["AF3"]),
    ("F7", "Fz", ["F5", "F3", "F1"]),
    ("FT7", "FCz", ["FC5", "FC3", "FC1"]),
    ("T7", "Cz", ["C5", "C3", "C1"]),
    ("TP7", "CPz", ["CP5", "CP3", "CP1"]),
    ("P7", "Pz", ["P5", "P3", "P1"]),
    ("PO7", "POz", ["PO3"]),
]


def _ring_point(az_deg: float) -> np.ndarray:
    az = math.radians(az_deg)
    return np.array([-math.sin(az), math.cos(az), 0.0])


def _midline_point(arc_deg: float) -> np.ndarray:
    a = math.radians(arc_deg)
    return np.array([0.0, math.cos(a), math.sin(a)])


def _circumcenter(a: np.ndarray, m: np.ndarray, b: np.ndarray) -> np.ndarray:
    # center of the circle through three points: equidistance gives two linear
    # equations, coplanarity the third
    n = np.cross(m - a, b - a)
    lhs = np.stack([2.0 * (m - a), 2.0 * (b - a), n])
    rhs = np.array([m @ m - a @ a, b @ b - a @ a, n @ a])
    return np.linalg.solve(lhs, rhs)


def _arc_points(a: np.ndarray, m: np.ndarray, b: np.ndarray, fractions) -> list[np.ndarray]:
    """Points at the given fractions of the arc from a to b passing through m."""
    c = _circumcenter(a, m, b)
    radial = a - c
    rho = np.linalg.norm(radial)
    u = radial / rho
    n = np.cross(m - a, b - a)
    n = n / np.linalg.norm(n)
    v = np.cross(n, u)
    if (m - c) @ v < 0.0:
        v = -v
    t_b = math.atan2((b - c) @ v, (b - c) @ u) % (2.0 * math.pi)
    out = []
    for f in fractions:
        t = f * t_b
        p = c + rho * (math.cos(t) * u + math.sin(t) * v)
        out.append(p / np.linalg.norm(p))
    return out


def _project(p: np.ndarray) -> tuple[float, float]:
    # azimuthal-equidistant: radius proportional to polar angle, equator at 1
    z = min(1.0, max(-1.0, float(p[2])))
    theta = math.acos(z)
    rxy = math.hypot(float(p[0]), float(p[1]))
    if rxy < 1e-12:
        return (0.0, 0.0)
    r = theta / (math.pi / 2.0)
    return (r * float(p[0]) / rxy, r * float(p[1]) / rxy)


def _build_left_and_midline() -> dict[str, tuple[float, float]]:
    # midline first: _midline_point has x = 0 exactly, which keeps the mirror
    # identity bitwise for Fpz/Oz (the ring parameterization leaves sin(pi) dust)
    table: dict[str, tuple[float, float]] = {}
    for name, arc in _MIDLINE:
        table[name] = _project(_midline_point(arc))
    for name, az in _RING:
        table.setdefault(name, _project(_ring_point(az)))
    for end_name, mid_name, interior in _ROWS:
        az = dict(_RING)[end_name]
        arc = dict(_MIDLINE)[mid_name]
        a = _ring_point(az)
        m = _midline_point(arc)
        b = a * np.array([-1.0, 1.0, 1.0])
        steps = 2 * (len(interior) + 1)
        fracs = [j / steps for j in range(1, len(interior) + 1)]
        for name, p in zip(interior, _arc_points(a, m, b, fracs)):
            table[name] = _project(p)
    return table


def standard_1010() -> Montage:
    """Built-in 10-10 montage covering the sensorimotor template and its surround."""
    left = _build_left_and_midline()
    full = dict(left)
    for name, (x, y) in left.items():
        mirrored = mirror_name(name)
        if mirrored != name:
            full[mirrored] = (-x, y)
    return Montage(coords=full)


_STANDARD: Montage | None = None


def get_standard_1010() -> Montage:
    """Cached accessor for the built-in table."""
    global _STANDARD
    if _STANDARD is None:
        _STANDARD = standard_1010()
    return _STANDARD

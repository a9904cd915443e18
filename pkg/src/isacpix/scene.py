"""Pixelated region of interest: grids, base stations, ground truth.

The ROI is a rectangle split into two coexisting grids: coarse
positioning pixels that may hold transmitting vehicles, and fine sensing
pixels that may hold passive scatterers. Both grids are indexed
row-major; the linear-index/center maps are bijections.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s; 30 GHz -> exactly 1 cm wavelength


class ConfigurationError(ValueError):
    pass


class DomainError(ValueError):
    pass


QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2.0)

CONSTELLATIONS = {"qpsk": QPSK}


def _check_divisible(total, step, name_total, name_step):
    ratio = total / step
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigurationError(
            f"{name_total}={total} is not an integer multiple of {name_step}={step}")
    return int(round(ratio))


def _grid_centers(length, width, lx, wy):
    """Row-major pixel centers: pixel (i, j) -> ((j+0.5)*lx, (i+0.5)*wy)."""
    n_cols = int(round(length / lx))
    n_rows = int(round(width / wy))
    jj, ii = np.meshgrid(np.arange(n_cols), np.arange(n_rows))
    xs = (jj.ravel() + 0.5) * lx
    ys = (ii.ravel() + 0.5) * wy
    return np.stack([xs, ys], axis=1)


@dataclass(frozen=True)
class RoiGeometry:
    """Immutable geometry of the region of interest."""
    length: float
    width: float
    pos_pixel: tuple          # (l_p, w_p)
    sens_pixel: tuple         # (l_s, w_s)
    bs_positions: np.ndarray  # (K, 2)
    wavelength: float
    n_p: int = field(init=False)
    n_s: int = field(init=False)
    pos_centers: np.ndarray = field(init=False)
    sens_centers: np.ndarray = field(init=False)

    def __post_init__(self):
        lp, wp = self.pos_pixel
        ls, ws = self.sens_pixel
        ncp = _check_divisible(self.length, lp, "L", "l_p")
        nrp = _check_divisible(self.width, wp, "W", "w_p")
        ncs = _check_divisible(self.length, ls, "L", "l_s")
        nrs = _check_divisible(self.width, ws, "W", "w_s")
        object.__setattr__(self, "n_p", ncp * nrp)
        object.__setattr__(self, "n_s", ncs * nrs)
        object.__setattr__(self, "pos_centers",
                           _grid_centers(self.length, self.width, lp, wp))
        object.__setattr__(self, "sens_centers",
                           _grid_centers(self.length, self.width, ls, ws))
        self.pos_centers.setflags(write=False)
        self.sens_centers.setflags(write=False)
        bs = np.asarray(self.bs_positions, dtype=float)
        object.__setattr__(self, "bs_positions", bs)
        bs.setflags(write=False)
        for centers, tag in ((self.pos_centers, "positioning"),
                             (self.sens_centers, "sensing")):
            d = np.linalg.norm(bs[:, None, :] - centers[None, :, :], axis=-1)
            if np.any(d < self.wavelength):
                raise ConfigurationError(
                    f"a base station lies within one wavelength of a {tag} "
                    f"pixel center (min distance {d.min():.3g} m)")

    @property
    def k(self):
        return self.bs_positions.shape[0]

    # Row-major index maps (both directions) for either grid.
    def pos_index_to_center(self, idx):
        return tuple(self.pos_centers[idx])

    def pos_center_to_index(self, xy):
        lp, wp = self.pos_pixel
        j = int(math.floor(xy[0] / lp))
        i = int(math.floor(xy[1] / wp))
        return i * int(round(self.length / lp)) + j

    def sens_index_to_center(self, idx):
        return tuple(self.sens_centers[idx])

    def sens_center_to_index(self, xy):
        ls, ws = self.sens_pixel
        j = int(math.floor(xy[0] / ls))
        i = int(math.floor(xy[1] / ws))
        return i * int(round(self.length / ls)) + j

    def geometry_hash(self):
        import hashlib
        h = hashlib.sha256()
        h.update(repr((self.length, self.width, self.pos_pixel, self.sens_pixel,
                       self.wavelength)).encode())
        h.update(np.ascontiguousarray(self.bs_positions).tobytes())
        return h.digest()


def build_geometry(length, width, pos_pixel, sens_pixel, n_bs,
                   carrier_frequency_hz=30e9, bs_radius_factor=1.5,
                   bs_positions=None):
    """Construct the ROI geometry.

    Base stations default to an evenly spaced circle of radius
    ``bs_radius_factor * max(L, W)`` around the ROI center; explicit
    ``bs_positions`` override the circle.
    """
    if length <= 0 or width <= 0:
        raise ConfigurationError("ROI dimensions must be positive")
    wavelength = SPEED_OF_LIGHT / carrier_frequency_hz
    if bs_positions is None:
        radius = bs_radius_factor * max(length, width)
        ang = 2.0 * math.pi * np.arange(n_bs) / n_bs
        cx, cy = length / 2.0, width / 2.0
        bs_positions = np.stack([cx + radius * np.cos(ang),
                                 cy + radius * np.sin(ang)], axis=1)
    return RoiGeometry(length=length, width=width,
                       pos_pixel=tuple(pos_pixel), sens_pixel=tuple(sens_pixel),
                       bs_positions=np.asarray(bs_positions, dtype=float),
                       wavelength=wavelength)


@dataclass(frozen=True)
class GroundTruth:
    """True scene contents: occupancy, symbols, scattering map, speeds."""
    p: np.ndarray          # binary (N_p,)
    s: np.ndarray          # complex (N_p,), supp(s) == supp(p)
    x: np.ndarray          # real (N_s,) in [0, 1]
    v: np.ndarray          # speeds m/s, nonzero only where p == 1

    def __post_init__(self):
        for a in (self.p, self.s, self.x, self.v):
            a.setflags(write=False)
        validate_truth(self)

    @property
    def n_vehicles(self):
        return int(np.sum(self.p))


def validate_truth(t):
    if not np.all(np.isin(t.p, (0, 1))):
        raise DomainError("occupancy vector must be binary")
    if np.any((t.x < 0) | (t.x > 1)):
        raise DomainError("scattering coefficients must lie in [0, 1]")
    supp_p = t.p != 0
    supp_s = t.s != 0
    if not np.array_equal(supp_p, supp_s):
        raise DomainError("supp(s) must equal supp(p)")
    if np.any(np.abs(np.abs(t.s[supp_s]) - 1.0) > 1e-9):
        raise DomainError("nonzero symbols must be unit modulus")
    if np.any(t.v[~supp_p] != 0):
        raise DomainError("speeds must be zero on unoccupied pixels")


def sample_scene(geometry, n_vehicles, gamma_s, constellation="qpsk",
                 rng_seed=0, target_amplitude="unit", v_max=0.0):
    """Draw a random scene.

    Exactly ``n_vehicles`` occupied positioning pixels; each sensing
    pixel holds a target independently with probability ``gamma_s``.
    ``target_amplitude``: "unit" sets present targets to 1, "uniform"
    draws them on (0, 1].
    """
    if n_vehicles > geometry.n_p:
        raise DomainError(f"n_vehicles={n_vehicles} exceeds N_p={geometry.n_p}")
    if not 0.0 <= gamma_s <= 1.0:
        raise DomainError("gamma_s must lie in [0, 1]")
    const = CONSTELLATIONS[constellation] if isinstance(constellation, str) \
        else np.asarray(constellation)
    rng = np.random.default_rng(rng_seed)

    p = np.zeros(geometry.n_p)
    s = np.zeros(geometry.n_p, dtype=complex)
    v = np.zeros(geometry.n_p)
    if n_vehicles > 0:
        occ = rng.choice(geometry.n_p, size=n_vehicles, replace=False)
        p[occ] = 1.0
        s[occ] = const[rng.integers(0, len(const), size=n_vehicles)]
        if v_max > 0:
            v[occ] = rng.uniform(0.0, v_max, size=n_vehicles)

    hit = rng.random(geometry.n_s) < gamma_s
    x = np.zeros(geometry.n_s)
    if target_amplitude == "unit":
        x[hit] = 1.0
    elif target_amplitude == "uniform":
        x[hit] = 1.0 - rng.random(np.count_nonzero(hit))  # (0, 1]
    else:
        raise DomainError(f"unknown target_amplitude {target_amplitude!r}")
    return GroundTruth(p=p, s=s, x=x, v=v)


# --------------------------------------------------------------------------
# Serialization (human-readable, validated on load)
# --------------------------------------------------------------------------

def save_scene(path, geometry, truth):
    doc = {
        "geometry": {
            "length": geometry.length,
            "width": geometry.width,
            "positioning_pixel": list(geometry.pos_pixel),
            "sensing_pixel": list(geometry.sens_pixel),
            "wavelength": geometry.wavelength,
            "bs_positions": geometry.bs_positions.tolist(),
        },
        "ground_truth": {
            "occupancy_p": truth.p.astype(int).tolist(),
            "symbols_s_real": truth.s.real.tolist(),
            "symbols_s_imag": truth.s.imag.tolist(),
            "scattering_x": truth.x.tolist(),
            "speeds_v": truth.v.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_scene(path):
    with open(path) as fh:
        doc = json.load(fh)
    g = doc["geometry"]
    geometry = RoiGeometry(
        length=g["length"], width=g["width"],
        pos_pixel=tuple(g["positioning_pixel"]),
        sens_pixel=tuple(g["sensing_pixel"]),
        bs_positions=np.asarray(g["bs_positions"], dtype=float),
        wavelength=g["wavelength"])
    t = doc["ground_truth"]
    truth = GroundTruth(
        p=np.asarray(t["occupancy_p"], dtype=float),
        s=np.asarray(t["symbols_s_real"]) + 1j * np.asarray(t["symbols_s_imag"]),
        x=np.asarray(t["scattering_x"], dtype=float),
        v=np.asarray(t["speeds_v"], dtype=float))
    if len(truth.p) != geometry.n_p or len(truth.x) != geometry.n_s:
        raise DomainError("scene file dimensions do not match geometry")
    return geometry, truth

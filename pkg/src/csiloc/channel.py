"""Synthetic LTE CSI at cell-specific reference signal (CRS) subcarriers.

The model per transmit antenna ``n`` and CRS subcarrier ``k`` is::

    h = A(L) * [ sqrt(K/(K+1)) * S_k(L) + sqrt(1/(K+1)) * D_k(L, block) ] * e^{j psi(slot)}

``A(L)`` is log-distance pathloss with a spatially smooth lognormal shadowing
field, ``S_k(L)`` a deterministic location-dependent specular response (direct
path plus a smooth 3-tap multipath field), ``D_k`` the Rayleigh scattered part
redrawn every ``coherence_slots`` slots, and ``psi`` a per-slot common phase
jitter. Additive estimation noise is applied to the amplitude and floored at 0.

Every random quantity is drawn from a generator keyed by
``(rng_seed, stream tag, location, counter)`` so any slot at any location can
be regenerated independently of call order.
"""

from __future__ import annotations

import functools
import hashlib
import math
import struct
from dataclasses import dataclass, fields

import numpy as np

from .config import Config
from .errors import DomainError, ParameterError

SUBCARRIER_SPACING_HZ = 15e3
SUBCARRIERS_PER_RB = 12
SHADOWING_CELL_M = 0.1

# CRS frequency offset v of the first CRS-bearing symbol, per antenna port.
_PORT_OFFSET = {0: 0, 1: 3, 2: 0, 3: 3}

_TAG_FADING = 1
_TAG_SLOT = 2
_TAG_SHADOW = 3
_TAG_SPECULAR = 4
_N_TAPS = 3
_N_WAVES = 64


@dataclass(frozen=True)
class CrsLayout:
    n_rb: int
    port: int
    cell_shift: int
    subcarrier_indices: tuple[int, ...]

    @property
    def n_c(self) -> int:
        return len(self.subcarrier_indices)


def crs_subcarrier_indices(n_rb: int, port: int = 0, cell_shift: int = 0) -> CrsLayout:
    """CRS comb of the first CRS-bearing OFDM symbol for ``port``.

    Two reference elements per resource block, six subcarriers apart, offset by
    ``(v + cell_shift) mod 6`` where ``v`` is the port's frequency offset.
    """
    if int(n_rb) != n_rb or n_rb < 1:
        raise ParameterError(f"n_rb must be a positive integer, got {n_rb}")
    if port not in _PORT_OFFSET:
        raise ParameterError(f"antenna port must be one of 0..3, got {port}")
    if int(cell_shift) != cell_shift or not 0 <= cell_shift <= 5:
        raise ParameterError(f"cell_shift must be in 0..5, got {cell_shift}")
    shift = (_PORT_OFFSET[port] + cell_shift) % 6
    indices = tuple(6 * m + shift for m in range(2 * n_rb))
    return CrsLayout(n_rb=n_rb, port=port, cell_shift=cell_shift, subcarrier_indices=indices)


@dataclass(frozen=True, eq=False)
class Scene:
    """Survey area, base station and reference/test points, all in meters.

    ``area_bounds`` is ``(xmin, ymin, xmax, ymax)``. The base station may sit
    outside the area (indoor scenes are served by an outdoor eNodeB).
    """

    area_bounds: tuple[float, float, float, float]
    bs_location: tuple[float, float]
    rp_locations: np.ndarray
    tp_locations: np.ndarray
    n_rb: int = 25
    n_tx: int = 1
    carrier_freq_hz: float = 1.86e9
    cell_shift: int = 0

    def __post_init__(self):
        rps = np.asarray(self.rp_locations, dtype=np.float64).reshape(-1, 2)
        tps = np.asarray(self.tp_locations, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "rp_locations", rps)
        object.__setattr__(self, "tp_locations", tps)
        object.__setattr__(self, "area_bounds", tuple(float(v) for v in self.area_bounds))
        object.__setattr__(self, "bs_location", tuple(float(v) for v in self.bs_location))
        xmin, ymin, xmax, ymax = self.area_bounds
        if not (xmin < xmax and ymin < ymax):
            raise ParameterError(f"degenerate area_bounds {self.area_bounds}")
        if len(rps) < 2:
            raise ParameterError("a scene needs at least two reference points")
        if len(np.unique(rps, axis=0)) != len(rps):
            raise ParameterError("reference points must be pairwise distinct")
        for name, pts in (("reference", rps), ("test", tps)):
            if len(pts) and not self.contains(pts).all():
                raise ParameterError(f"{name} point outside area_bounds {self.area_bounds}")
        if self.n_rb < 1:
            raise ParameterError(f"n_rb must be >= 1, got {self.n_rb}")
        if self.n_tx not in (1, 2, 4):
            raise ParameterError(f"n_tx must be 1, 2 or 4, got {self.n_tx}")
        if self.carrier_freq_hz <= 0:
            raise ParameterError("carrier_freq_hz must be positive")

    @property
    def m(self) -> int:
        return len(self.rp_locations)

    @property
    def n_c(self) -> int:
        return 2 * self.n_rb

    @property
    def feature_width(self) -> int:
        return self.n_tx * self.n_c

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        xmin, ymin, xmax, ymax = self.area_bounds
        return (
            (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
        )

    def layouts(self) -> list[CrsLayout]:
        return [crs_subcarrier_indices(self.n_rb, port, self.cell_shift) for port in range(self.n_tx)]

    def to_config(self) -> Config:
        return Config(
            {
                "area_bounds": " ".join(repr(v) for v in self.area_bounds),
                "bs_location": " ".join(repr(v) for v in self.bs_location),
                "rp_locations": " ".join(repr(float(v)) for v in self.rp_locations.ravel()),
                "tp_locations": " ".join(repr(float(v)) for v in self.tp_locations.ravel()),
                "n_rb": str(self.n_rb),
                "n_tx": str(self.n_tx),
                "carrier_freq_hz": repr(float(self.carrier_freq_hz)),
                "cell_shift": str(self.cell_shift),
            }
        )

    @classmethod
    def from_config(cls, cfg: Config) -> "Scene":
        return cls(
            area_bounds=cfg.get_floats("area_bounds"),
            bs_location=cfg.get_floats("bs_location"),
            rp_locations=np.array(cfg.get_floats("rp_locations")),
            tp_locations=np.array(cfg.get_floats("tp_locations", ())),
            n_rb=cfg.get_int("n_rb", 25),
            n_tx=cfg.get_int("n_tx", 1),
            carrier_freq_hz=cfg.get_float("carrier_freq_hz", 1.86e9),
            cell_shift=cfg.get_int("cell_shift", 0),
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_config().dumps().encode()).hexdigest()


@dataclass(frozen=True)
class ChannelParams:
    """Channel model knobs.

    ``noise_sigma`` is the standard deviation of the additive amplitude noise
    relative to the local mean amplitude (pathloss times shadowing), i.e. an
    inverse linear SNR. ``rician_k = inf`` removes the scattered component.
    ``specular_multipath`` is the power fraction of the deterministic response
    carried by the location-dependent delayed taps; 0 makes it frequency-flat.
    """

    pathloss_exponent: float = 3.0
    pathloss_ref_db: float = 40.0
    shadowing_sigma_db: float = 4.0
    rician_k: float = 4.0
    coherence_slots: int = 5
    noise_sigma: float = 0.05
    rng_seed: int = 0
    decorrelation_m: float = 1.5
    specular_multipath: float = 0.6
    tap_spacing_s: float = 4e-7

    def __post_init__(self):
        if not self.pathloss_exponent > 0:
            raise ParameterError("pathloss_exponent must be > 0")
        if not self.shadowing_sigma_db >= 0:
            raise ParameterError("shadowing_sigma_db must be >= 0")
        if not self.rician_k >= 0:
            raise ParameterError("rician_k must be >= 0")
        if int(self.coherence_slots) != self.coherence_slots or self.coherence_slots < 1:
            raise ParameterError("coherence_slots must be an integer >= 1")
        if not self.noise_sigma >= 0:
            raise ParameterError("noise_sigma must be >= 0")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ParameterError("rng_seed must be a nonnegative integer")
        if not self.decorrelation_m > 0:
            raise ParameterError("decorrelation_m must be > 0")
        if not 0 <= self.specular_multipath <= 1:
            raise ParameterError("specular_multipath must be in [0, 1]")
        if not self.tap_spacing_s >= 0:
            raise ParameterError("tap_spacing_s must be >= 0")

    @classmethod
    def from_config(cls, cfg: Config, base: "ChannelParams | None" = None) -> "ChannelParams":
        base = base or cls()
        kwargs = {}
        for f in fields(cls):
            if f.name in cfg:
                getter = cfg.get_int if f.type in ("int", int) else cfg.get_float
                kwargs[f.name] = getter(f.name)
            else:
                kwargs[f.name] = getattr(base, f.name)
        return cls(**kwargs)

    def to_config(self) -> Config:
        return Config({f.name: repr(getattr(self, f.name)) for f in fields(self)})

    def noiseless(self) -> "ChannelParams":
        """Same scene structure with shadowing, fading and noise switched off."""
        return ChannelParams(**{**self.__dict__, "shadowing_sigma_db": 0.0,
                                "rician_k": math.inf, "noise_sigma": 0.0})


def pathloss_db(distance_m, params: ChannelParams):
    d = np.maximum(np.asarray(distance_m, dtype=np.float64), 1.0)
    return params.pathloss_ref_db + 10.0 * params.pathloss_exponent * np.log10(d)


def pathloss_gain(distance_m, params: ChannelParams):
    """Linear amplitude gain of the log-distance model, distance floored at 1 m."""
    return 10.0 ** (-pathloss_db(distance_m, params) / 20.0)


def tap_powers() -> np.ndarray:
    p = np.exp(-np.arange(_N_TAPS, dtype=np.float64))
    return p / p.sum()


class _SmoothField:
    """Unit-variance Gaussian-like random field with correlation length ``scale``.

    Sum of random plane waves whose wavevectors are drawn from a Gaussian
    spectrum, giving correlation ``exp(-r^2 / (2 scale^2))``.
    """

    def __init__(self, seed: int, tag: int, index: int, scale: float):
        rng = np.random.default_rng([seed, tag, index])
        self.k = rng.normal(0.0, 1.0 / scale, size=(_N_WAVES, 2))
        self.phi = rng.uniform(0.0, 2 * np.pi, size=_N_WAVES)

    def __call__(self, xy: np.ndarray) -> float:
        return float(math.sqrt(2.0 / _N_WAVES) * np.cos(self.k @ xy + self.phi).sum())


@functools.lru_cache(maxsize=256)
def _field(seed: int, tag: int, index: int, scale: float) -> _SmoothField:
    return _SmoothField(seed, tag, index, scale)


def _check_location(scene: Scene, location) -> np.ndarray:
    loc = np.asarray(location, dtype=np.float64).reshape(2)
    if not np.isfinite(loc).all() or not scene.contains(loc)[0]:
        raise DomainError(f"location {tuple(map(float, loc))} outside feasible area {scene.area_bounds}")
    return loc


def _location_key(loc: np.ndarray) -> list[int]:
    return list(struct.unpack("<QQ", struct.pack("<dd", float(loc[0]), float(loc[1]))))


def _frequency_offsets(scene: Scene) -> np.ndarray:
    """Baseband offset (Hz) of every CRS subcarrier, shape ``(n_tx, n_c)``."""
    center = SUBCARRIERS_PER_RB * scene.n_rb / 2
    return np.array(
        [[(k - center) * SUBCARRIER_SPACING_HZ for k in lay.subcarrier_indices] for lay in scene.layouts()]
    )


def _tap_phasors(scene: Scene, params: ChannelParams) -> np.ndarray:
    """``sqrt(p_l) * exp(-j 2 pi df tau_l)``, shape ``(n_tx, taps, n_c)``."""
    delays = params.tap_spacing_s * np.arange(_N_TAPS)
    df = _frequency_offsets(scene)
    ph = np.exp(-2j * np.pi * df[:, None, :] * delays[None, :, None])
    return np.sqrt(tap_powers())[None, :, None] * ph


def mean_amplitude(scene: Scene, params: ChannelParams, location) -> float:
    """Pathloss gain times the frozen shadowing at ``location``."""
    loc = _check_location(scene, location)
    d = float(np.hypot(*(loc - np.asarray(scene.bs_location))))
    gain = float(pathloss_gain(d, params))
    if params.shadowing_sigma_db > 0:
        q = np.round(loc / SHADOWING_CELL_M) * SHADOWING_CELL_M
        shadow_db = params.shadowing_sigma_db * _field(
            params.rng_seed, _TAG_SHADOW, 0, params.decorrelation_m)(q)
        gain *= 10.0 ** (shadow_db / 20.0)
    return gain


def specular_response(scene: Scene, params: ChannelParams, location) -> np.ndarray:
    """Deterministic unit-mean-power response ``S``, shape ``(n_tx, n_c)``."""
    loc = _check_location(scene, location)
    mu = params.specular_multipath
    out = np.full((scene.n_tx, scene.n_c), math.sqrt(1.0 - mu), dtype=np.complex128)
    if mu == 0:
        return out
    q = np.round(loc / SHADOWING_CELL_M) * SHADOWING_CELL_M
    coeffs = np.empty((scene.n_tx, _N_TAPS), dtype=np.complex128)
    for n in range(scene.n_tx):
        for tap in range(_N_TAPS):
            idx = 2 * (n * _N_TAPS + tap)
            re = _field(params.rng_seed, _TAG_SPECULAR, idx, params.decorrelation_m)(q)
            im = _field(params.rng_seed, _TAG_SPECULAR, idx + 1, params.decorrelation_m)(q)
            coeffs[n, tap] = (re + 1j * im) / math.sqrt(2.0)
    phasors = _tap_phasors(scene, params)
    return out + math.sqrt(mu) * np.einsum("nl,nlc->nc", coeffs, phasors)


def synth_stream(scene: Scene, params: ChannelParams, location, slots) -> np.ndarray:
    """Complex CSI for every slot in ``slots``, shape ``(len(slots), n_tx, n_c)``."""
    loc = _check_location(scene, location)
    slots = np.asarray(slots, dtype=np.int64).reshape(-1)
    if (slots < 0).any():
        raise ParameterError("slot indices must be >= 0")
    amp = mean_amplitude(scene, params, loc)
    specular = specular_response(scene, params, loc)
    key = _location_key(loc)
    k = params.rician_k
    if math.isinf(k):
        w_spec, w_scat = 1.0, 0.0
    else:
        w_spec, w_scat = math.sqrt(k / (k + 1.0)), math.sqrt(1.0 / (k + 1.0))
    phasors = _tap_phasors(scene, params) if w_scat > 0 else None

    out = np.empty((len(slots), scene.n_tx, scene.n_c), dtype=np.complex128)
    scattered_cache: dict[int, np.ndarray] = {}
    for i, slot in enumerate(slots.tolist()):
        h = w_spec * specular
        if phasors is not None:
            block = slot // params.coherence_slots
            scat = scattered_cache.get(block)
            if scat is None:
                rng = np.random.default_rng([params.rng_seed, _TAG_FADING, *key, block])
                g = (rng.standard_normal((scene.n_tx, _N_TAPS))
                     + 1j * rng.standard_normal((scene.n_tx, _N_TAPS))) / math.sqrt(2.0)
                scat = np.einsum("nl,nlc->nc", g, phasors)
                scattered_cache[block] = scat
            h = h + w_scat * scat
        rng = np.random.default_rng([params.rng_seed, _TAG_SLOT, *key, slot])
        jitter = rng.uniform(-np.pi, np.pi)
        noise = rng.standard_normal(h.shape)
        magnitude = amp * np.abs(h)
        if params.noise_sigma > 0:
            magnitude = np.maximum(magnitude + params.noise_sigma * amp * noise, 0.0)
        out[i] = magnitude * np.exp(1j * (np.angle(h) + jitter))
    return out


def synth_csi(scene: Scene, params: ChannelParams, location, slot: int) -> np.ndarray:
    """Complex CSI matrix ``(n_tx, n_c)`` at ``location`` in ``slot``."""
    return synth_stream(scene, params, location, [slot])[0]


def to_polar(csi) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude and phase wrapped to ``[-pi, pi)``."""
    csi = np.asarray(csi)
    phase = np.mod(np.angle(csi) + np.pi, 2 * np.pi) - np.pi
    return np.abs(csi), phase


def amplitude_snapshot(csi) -> np.ndarray:
    """Drop the phase and flatten ``(n_tx, n_c)`` row-major."""
    csi = np.asarray(csi)
    if csi.size == 0:
        raise ParameterError("empty CSI matrix")
    return np.abs(csi).reshape(-1)


def mean_fingerprint(snapshots) -> np.ndarray:
    """Elementwise mean of a list of snapshots (the averaged pathloss component)."""
    if len(snapshots) == 0:
        raise ParameterError("mean_fingerprint needs at least one snapshot")
    stack = np.asarray([np.asarray(s, dtype=np.float64) for s in snapshots])
    if stack.dtype == object or stack.ndim != 2:
        raise ParameterError("snapshots must share one shape")
    return stack.mean(axis=0)


# --- scene presets -----------------------------------------------------------

INDOOR_BOUNDS = (0.0, 0.0, 3.6, 6.0)
INDOOR_BS = (-40.0, -25.0)
OUTDOOR_BOUNDS = (0.0, 0.0, 195.0, 360.0)
OUTDOOR_BS = (185.0, 10.0)
OUTDOOR_WAYPOINTS = ((15.0, 15.0), (15.0, 345.0), (180.0, 345.0), (180.0, 300.0))


def indoor_scene(n_tp: int = 20, tp_seed: int = 0, bs_location=INDOOR_BS, n_rb: int = 25,
                 n_tx: int = 1, spacing: float = 1.2) -> Scene:
    """3.6 m x 6 m room gridded into 1.2 m squares with one RP at each centre."""
    xmin, ymin, xmax, ymax = INDOOR_BOUNDS
    xs = np.arange(xmin + spacing / 2, xmax, spacing)
    ys = np.arange(ymin + spacing / 2, ymax, spacing)
    rps = np.array([(x, y) for y in ys for x in xs])
    rng = np.random.default_rng(tp_seed)
    tps = np.column_stack([rng.uniform(xmin, xmax, n_tp), rng.uniform(ymin, ymax, n_tp)])
    return Scene(INDOOR_BOUNDS, bs_location, rps, tps, n_rb=n_rb, n_tx=n_tx)


def _along(waypoints, s: np.ndarray) -> np.ndarray:
    pts = np.asarray(waypoints, dtype=np.float64)
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    if (s > cum[-1] + 1e-9).any():
        raise ParameterError(f"trajectory too short ({cum[-1]:.1f} m) for requested points")
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / lengths[idx]
    return pts[idx] + frac[:, None] * seg[idx]


def outdoor_scene(n_rp: int = 105, spacing: float = 5.0, n_tp: int = 20, tp_seed: int = 0,
                  bs_location=OUTDOOR_BS, n_rb: int = 25, n_tx: int = 1) -> Scene:
    """RPs every ``spacing`` meters along a fixed route; TPs at random spots on it."""
    rps = _along(OUTDOOR_WAYPOINTS, spacing * np.arange(n_rp))
    rng = np.random.default_rng(tp_seed)
    tps = _along(OUTDOOR_WAYPOINTS, np.sort(rng.uniform(0.0, spacing * (n_rp - 1), n_tp)))
    return Scene(OUTDOOR_BOUNDS, bs_location, rps, tps, n_rb=n_rb, n_tx=n_tx)


INDOOR_CHANNEL = ChannelParams(
    pathloss_exponent=3.0, pathloss_ref_db=40.0, shadowing_sigma_db=4.0, rician_k=4.0,
    coherence_slots=5, noise_sigma=0.05, decorrelation_m=1.5, specular_multipath=0.6,
    tap_spacing_s=4e-7,
)
OUTDOOR_CHANNEL = ChannelParams(
    pathloss_exponent=3.5, pathloss_ref_db=35.0, shadowing_sigma_db=6.0, rician_k=2.0,
    coherence_slots=5, noise_sigma=0.05, decorrelation_m=8.0, specular_multipath=0.6,
    tap_spacing_s=6e-7,
)


def scene_from_config(cfg: Config) -> Scene:
    """Explicit scene if ``rp_locations`` is given, otherwise a named preset."""
    if "rp_locations" in cfg:
        return Scene.from_config(cfg)
    name = cfg.get_str("scene", "indoor")
    common = dict(
        n_tp=cfg.get_int("tp_count", 20),
        tp_seed=cfg.get_int("tp_seed", 0),
        n_rb=cfg.get_int("n_rb", 25),
        n_tx=cfg.get_int("n_tx", 1),
    )
    if name == "indoor":
        bs = cfg.get_floats("bs_location", INDOOR_BS)
        return indoor_scene(bs_location=bs, spacing=cfg.get_float("rp_spacing", 1.2), **common)
    if name == "outdoor":
        bs = cfg.get_floats("bs_location", OUTDOOR_BS)
        return outdoor_scene(n_rp=cfg.get_int("rp_count", 105),
                             spacing=cfg.get_float("rp_spacing", 5.0), bs_location=bs, **common)
    raise ParameterError(f"unknown scene preset {name!r}")


def channel_from_config(cfg: Config) -> ChannelParams:
    base = OUTDOOR_CHANNEL if cfg.get_str("scene", "indoor") == "outdoor" else INDOOR_CHANNEL
    params = ChannelParams.from_config(cfg, base)
    if cfg.get_bool("noiseless", False):
        params = params.noiseless()
    return params

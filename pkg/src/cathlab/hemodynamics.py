"""Hemodynamic quantification from dynamic anatomy.

Chamber volumes come from closed surface meshes by the divergence theorem;
a natural cubic spline through the per-phase volumes gives the volume-time
curve from which filling/ejection metrics, flow, and valve-event timing are
derived.  ECG handling (R-peak detection, heart rates, synthesis for testing)
lives here too.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import butter, filtfilt

from .errors import InsufficientDataError, MeshError, ValidationError
from .volume import SurfaceMesh


def mesh_volume(mesh: SurfaceMesh) -> float:
    """Enclosed volume of a closed, outward-oriented mesh, in millilitres.

    Uses the divergence identity (one third of the flux of the position
    field); the result is translation invariant.  An open mesh raises, and a
    consistently inward orientation is reported as an orientation error.
    """
    if not mesh.is_closed():
        raise MeshError("mesh is not closed; volume undefined")
    v = mesh.vertices
    t = mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    signed_mm3 = float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)
    if signed_mm3 < 0:
        raise MeshError("mesh is oriented inward (negative volume)")
    return signed_mm3 / 1000.0


@dataclass(frozen=True)
class VolumeTimeCurve:
    """Natural cubic spline through per-phase chamber volumes."""

    times_s: np.ndarray = field(repr=False)
    volumes_ml: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=float)
        v = np.asarray(self.volumes_ml, dtype=float)
        if t.size < 4:
            raise ValidationError("volume-time curve needs at least 4 samples")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("sample times must be strictly increasing")
        if t.shape != v.shape:
            raise ValidationError("times and volumes must have equal length")
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "volumes_ml", v)
        object.__setattr__(self, "_spline", CubicSpline(t, v, bc_type="natural"))

    @property
    def period_s(self) -> float:
        return float(self.times_s[-1] - self.times_s[0])

    def value(self, t) -> np.ndarray:
        return self._spline(t)

    def derivative(self, t) -> np.ndarray:
        return self._spline(t, 1)

    def save_csv(self, path: str, n: int = 400) -> None:
        ts = np.linspace(self.times_s[0], self.times_s[-1], n)
        with open(path, "w") as f:
            f.write("time_s,volume_ml\n")
            for t, v in zip(ts, self.value(ts)):
                f.write(f"{float(t)!r},{float(v)!r}\n")


def build_curve(times_s, volumes_ml) -> VolumeTimeCurve:
    return VolumeTimeCurve(times_s, volumes_ml)


def _golden_refine(fun, lo: float, hi: float, maximize: bool, tol: float = 1e-10) -> float:
    """Golden-section extremum refinement on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    sign = -1.0 if maximize else 1.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = sign * fun(c), sign * fun(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = sign * fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = sign * fun(d)
    return (a + b) / 2.0


def _extremum(curve: VolumeTimeCurve, maximize: bool) -> tuple[float, float]:
    ts = np.linspace(curve.times_s[0], curve.times_s[-1], 2001)
    vals = curve.value(ts)
    k = int(np.argmax(vals) if maximize else np.argmin(vals))
    lo = ts[max(k - 1, 0)]
    hi = ts[min(k + 1, len(ts) - 1)]
    t_star = _golden_refine(lambda t: float(curve.value(t)), lo, hi, maximize)
    return float(curve.value(t_star)), t_star


def edv_esv(curve: VolumeTimeCurve) -> tuple[float, float, float, float]:
    """Global max/min of the volume curve: (EDV, ESV, t_edv, t_esv)."""
    edv, t_edv = _extremum(curve, maximize=True)
    esv, t_esv = _extremum(curve, maximize=False)
    return edv, esv, t_edv, t_esv


def stroke_cardiac_output(edv_ml: float, esv_ml: float, hr_bpm: float) -> tuple[float, float, float]:
    """(SV ml, CO L/min, EF %) from the volume extremes and heart rate."""
    if not edv_ml > esv_ml > 0:
        raise ValidationError("need EDV > ESV > 0")
    if hr_bpm <= 0:
        raise ValidationError("heart rate must be positive")
    sv = edv_ml - esv_ml
    return sv, sv * hr_bpm / 1000.0, sv / edv_ml * 100.0


def valve_events(curve: VolumeTimeCurve, threshold_frac: float = 0.05) -> tuple[float, float]:
    """Aortic valve opening/closure times from the systolic descent.

    The ejection window is bounded by the first and last instants around the
    steepest volume drop where the emptying rate still exceeds
    ``threshold_frac`` of its peak magnitude.
    """
    t0, t1 = curve.times_s[0], curve.times_s[-1]
    ts = np.linspace(t0, t1, 4001)
    dv = curve.derivative(ts)
    k_min = int(np.argmin(dv))
    thr = threshold_frac * abs(dv[k_min])
    i = k_min
    while i > 0 and dv[i - 1] < -thr:
        i -= 1
    j = k_min
    while j < len(ts) - 1 and dv[j + 1] < -thr:
        j += 1
    return float(ts[i]), float(ts[j])


def flow_rate(
    curve: VolumeTimeCurve, t_avo: float, t_avc: float, n: int = 200
) -> tuple[np.ndarray, np.ndarray]:
    """Transvalvular flow during ejection: times and Q = -dV/dt (ml/s)."""
    t0, t1 = curve.times_s[0], curve.times_s[-1]
    if not (t0 <= t_avo < t_avc <= t1):
        raise ValidationError("ejection window must lie inside the curve domain")
    ts = np.linspace(t_avo, t_avc, n)
    return ts, -curve.derivative(ts)


def peak_rates(
    curve: VolumeTimeCurve, t_avo: float, t_avc: float
) -> tuple[float, float, float, float]:
    """(PER, t_per, PFR, t_pfr): extreme volume slopes in systole/diastole.

    PER is the most negative dV/dt inside the ejection window (reported with
    its sign); PFR is the largest dV/dt outside it.
    """
    t0, t1 = curve.times_s[0], curve.times_s[-1]
    if not (t0 <= t_avo < t_avc <= t1):
        raise ValidationError("ejection window must lie inside the curve domain")
    sys_ts = np.linspace(t_avo, t_avc, 2001)
    dv_sys = curve.derivative(sys_ts)
    k = int(np.argmin(dv_sys))
    t_per = _golden_refine(
        lambda t: float(curve.derivative(t)),
        sys_ts[max(k - 1, 0)],
        sys_ts[min(k + 1, len(sys_ts) - 1)],
        maximize=False,
    )
    per = float(curve.derivative(t_per))

    dia_ts = np.concatenate(
        [np.linspace(t0, t_avo, 800), np.linspace(t_avc, t1, 1200)]
    )
    dv_dia = curve.derivative(dia_ts)
    k = int(np.argmax(dv_dia))
    lo = dia_ts[max(k - 1, 0)]
    hi = dia_ts[min(k + 1, len(dia_ts) - 1)]
    if lo > hi:
        lo, hi = hi, lo
    t_pfr = _golden_refine(lambda t: float(curve.derivative(t)), lo, hi, maximize=True)
    pfr = float(curve.derivative(t_pfr))
    return per, float(t_per), pfr, float(t_pfr)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def effective_orifice_area(loops) -> float:
    """Area (cm^2) enclosed by one or more near-planar boundary loops.

    Each loop is projected onto its best-fit plane and measured with the
    shoelace formula; self-intersecting loops are rejected.
    """
    if isinstance(loops, np.ndarray) or (loops and np.asarray(loops[0]).ndim == 1):
        loops = [loops]
    total_mm2 = 0.0
    for loop in loops:
        pts = np.asarray(loop, dtype=float).reshape(-1, 3)
        if len(pts) < 3:
            raise ValidationError("orifice loop needs at least 3 points")
        centred = pts - pts.mean(axis=0)
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        flat = centred @ vt[:2].T
        n = len(flat)
        for i in range(n):
            a, b = flat[i], flat[(i + 1) % n]
            for j in range(i + 1, n):
                if abs(i - j) <= 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(a, b, flat[j], flat[(j + 1) % n]):
                    raise ValidationError("orifice loop self-intersects")
        x, y = flat[:, 0], flat[:, 1]
        total_mm2 += 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return total_mm2 / 100.0


def regurgitant_volume(times_s, q_ml_s, sv_ml: float) -> tuple[float, float]:
    """Retrograde volume over a diastolic flow sampling and SV_eff = SV - RV."""
    t = np.asarray(times_s, dtype=float)
    q = np.asarray(q_ml_s, dtype=float)
    if t.size < 2:
        raise ValidationError("diastolic window is empty")
    rv = float(np.trapezoid(np.maximum(q, 0.0), t))
    return rv, sv_ml - rv


def aortic_distension(
    z_cm, area_sys_cm2, area_dia_cm2, z1_cm: float, z2_cm: float
) -> float:
    """Volumetric distension (ml) of an aortic segment between two states.

    Integrates the systolic-minus-diastolic cross-section area over
    [z1, z2]; the z grid must cover the segment.
    """
    z = np.asarray(z_cm, dtype=float)
    a_sys = np.asarray(area_sys_cm2, dtype=float)
    a_dia = np.asarray(area_dia_cm2, dtype=float)
    if z1_cm >= z2_cm:
        raise ValidationError("need z1 < z2")
    if z[0] > z1_cm or z[-1] < z2_cm:
        raise ValidationError("area profile does not cover the segment")
    zi = np.unique(np.concatenate([[z1_cm, z2_cm], z[(z > z1_cm) & (z < z2_cm)]]))
    diff = np.interp(zi, z, a_sys) - np.interp(zi, z, a_dia)
    return float(np.trapezoid(diff, zi))


# --- ECG --------------------------------------------------------------------


@dataclass(frozen=True)
class ECGTrace:
    """Sampled ECG with detected R-peak times."""

    fs_hz: float
    samples_mv: np.ndarray = field(repr=False)
    r_peaks: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.fs_hz <= 0:
            raise ValidationError("sample rate must be positive")
        peaks = np.asarray(self.r_peaks, dtype=float)
        if peaks.size > 1 and np.any(np.diff(peaks) <= 0):
            raise ValidationError("peak times must be strictly increasing")
        object.__setattr__(self, "samples_mv", np.asarray(self.samples_mv, dtype=float))
        object.__setattr__(self, "r_peaks", peaks)

    @classmethod
    def from_signal(cls, samples_mv, fs_hz: float) -> "ECGTrace":
        peaks = detect_r_peaks(samples_mv, fs_hz)
        return cls(fs_hz, samples_mv, peaks)

    def save_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("time_s,mv\n")
            for i, v in enumerate(self.samples_mv):
                f.write(f"{i / self.fs_hz!r},{float(v)!r}\n")
            f.write("# r_peaks: " + ",".join(repr(float(t)) for t in self.r_peaks) + "\n")

    @classmethod
    def load_csv(cls, path: str) -> "ECGTrace":
        times, values, peaks = [], [], None
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line.startswith("# r_peaks:"):
                    body = line.split(":", 1)[1].strip()
                    peaks = [float(x) for x in body.split(",")] if body else []
                elif line and not line.startswith(("time_s", "#")):
                    t, v = line.split(",")
                    times.append(float(t))
                    values.append(float(v))
        if len(times) < 2:
            raise InsufficientDataError(f"{path}: ECG needs at least two samples")
        fs = 1.0 / (times[1] - times[0])
        samples = np.asarray(values)
        if peaks is None:
            return cls.from_signal(samples, fs)
        return cls(fs, samples, np.asarray(peaks))


def detect_r_peaks(samples_mv, fs_hz: float) -> np.ndarray:
    """R-peak times via band-pass, squared derivative energy, and an adaptive
    threshold with a 200 ms refractory period."""
    x = np.asarray(samples_mv, dtype=float)
    if fs_hz < 100:
        raise InsufficientDataError("sample rate must be at least 100 Hz")
    if x.size < 2 * fs_hz:
        raise InsufficientDataError("need at least 2 s of signal")
    nyq = fs_hz / 2.0
    b, a = butter(2, [5.0 / nyq, 25.0 / nyq], btype="bandpass")
    band = filtfilt(b, a, x)
    energy = np.gradient(band) ** 2
    win = max(int(0.12 * fs_hz), 1)
    energy = np.convolve(energy, np.ones(win) / win, mode="same")

    # adaptive threshold: half the rolling maximum over ~2 s
    roll = max(int(2.0 * fs_hz), 1)
    n_blocks = -(-x.size // roll)
    block_max = np.array(
        [energy[i * roll : (i + 1) * roll].max() for i in range(n_blocks)]
    )
    thresh_blocks = 0.5 * np.maximum(block_max, 1e-12 * max(energy.max(), 1e-300))
    threshold = np.repeat(thresh_blocks, roll)[: x.size]

    above = energy > threshold
    refractory = int(0.2 * fs_hz)
    peaks = []
    i = 0
    while i < x.size:
        if above[i]:
            j = i
            while j < x.size and above[j]:
                j += 1
            seg = slice(i, j)
            k = i + int(np.argmax(energy[seg]))
            # refine to the raw-signal extremum near the energy peak
            lo = max(k - int(0.04 * fs_hz), 0)
            hi = min(k + int(0.04 * fs_hz) + 1, x.size)
            k = lo + int(np.argmax(band[lo:hi]))
            if not peaks or (k - peaks[-1]) >= refractory:
                peaks.append(k)
            elif band[k] > band[peaks[-1]]:
                peaks[-1] = k
            i = j
        else:
            i += 1
    if not peaks:
        raise InsufficientDataError("no R peaks found")
    return np.asarray(peaks, dtype=float) / fs_hz


def heart_rates(peak_times) -> tuple[np.ndarray, float]:
    """Instantaneous rates 60/RRI and their interval-weighted mean (bpm)."""
    t = np.asarray(peak_times, dtype=float)
    if t.size < 2:
        raise InsufficientDataError("need at least two R peaks")
    rri = np.diff(t)
    return 60.0 / rri, 60.0 * (t.size - 1) / float(rri.sum())


def synthesize_ecg(
    duration_s: float,
    hr_bpm: float,
    fs_hz: float = 500.0,
    snr_db: float | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic single-lead ECG; returns (samples_mv, true_peak_times)."""
    if duration_s <= 0 or hr_bpm <= 0:
        raise ValidationError("duration and heart rate must be positive")
    t = np.arange(int(duration_s * fs_hz)) / fs_hz
    x = np.zeros_like(t)
    rri = 60.0 / hr_bpm
    peaks = np.arange(rri, duration_s - 0.3, rri)
    waves = (  # (amplitude mV, offset s, width s)
        (0.12, -0.20, 0.025),
        (-0.15, -0.016, 0.008),
        (1.0, 0.0, 0.009),
        (-0.25, 0.017, 0.009),
        (0.30, min(0.16, 0.35 * rri), 0.05),
    )
    for tp in peaks:
        for amp, off, width in waves:
            x += amp * np.exp(-((t - tp - off) ** 2) / (2.0 * width * width))
    if snr_db is not None:
        rng = np.random.default_rng(seed)
        p_signal = float(np.mean(x**2))
        sigma = math.sqrt(p_signal / (10.0 ** (snr_db / 10.0)))
        x = x + rng.normal(0.0, sigma, x.shape)
    return x, peaks


# --- report -----------------------------------------------------------------


@dataclass(frozen=True)
class HemodynamicsReport:
    edv_ml: float
    esv_ml: float
    sv_ml: float
    ef_pct: float
    co_l_min: float
    per_ml_s: float
    pfr_ml_s: float
    t_avo_s: float
    t_avc_s: float
    rv_ml: float
    sv_eff_ml: float
    mean_hr_bpm: float

    def __post_init__(self):
        if not self.edv_ml > self.esv_ml:
            raise ValidationError("EDV must exceed ESV")
        for name, got, want in (
            ("sv_ml", self.sv_ml, self.edv_ml - self.esv_ml),
            ("ef_pct", self.ef_pct, self.sv_ml / self.edv_ml * 100.0),
            ("sv_eff_ml", self.sv_eff_ml, self.sv_ml - self.rv_ml),
        ):
            if abs(got - want) > 1e-9 * max(1.0, abs(want)):
                raise ValidationError(f"report identity violated for {name}")

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def hemodynamics_report(
    times_s,
    volumes_ml,
    hr_bpm: float | None = None,
    ecg: ECGTrace | None = None,
    t_avo: float | None = None,
    t_avc: float | None = None,
) -> HemodynamicsReport:
    """Full quantification chain from a sampled volume-time sequence.

    Heart rate comes from the ECG mean unless given explicitly; valve events
    are detected from the curve unless overridden.  Retrograde flow is the
    positive part of -dV/dt over diastole.
    """
    curve = build_curve(times_s, volumes_ml)
    edv, esv, _, _ = edv_esv(curve)
    if hr_bpm is None:
        if ecg is None:
            raise ValidationError("need either hr_bpm or an ECG trace")
        _, hr_bpm = heart_rates(ecg.r_peaks)
    sv, co, ef = stroke_cardiac_output(edv, esv, hr_bpm)
    if t_avo is None or t_avc is None:
        t_avo, t_avc = valve_events(curve)
    per, _, pfr, _ = peak_rates(curve, t_avo, t_avc)

    t0, t1 = curve.times_s[0], curve.times_s[-1]
    late = np.linspace(t_avc, t1, 400)
    early = np.linspace(t0, t_avo, 200)
    rv = float(
        np.trapezoid(np.maximum(-curve.derivative(late), 0.0), late)
        + np.trapezoid(np.maximum(-curve.derivative(early), 0.0), early)
    )
    return HemodynamicsReport(
        edv_ml=edv,
        esv_ml=esv,
        sv_ml=sv,
        ef_pct=ef,
        co_l_min=co,
        per_ml_s=per,
        pfr_ml_s=pfr,
        t_avo_s=t_avo,
        t_avc_s=t_avc,
        rv_ml=rv,
        sv_eff_ml=sv - rv,
        mean_hr_bpm=hr_bpm,
    )

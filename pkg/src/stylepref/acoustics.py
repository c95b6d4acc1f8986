"""Acoustic proxy extraction from raw waveforms.

Ten proxies are computed here (pitch, voicing, flux, formants, pauses,
syllable rates); arousal is passed through from the manifest. All level
thresholds are relative to the utterance peak, and spectra are L1-normalized,
so every proxy is insensitive to overall gain.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import butter, find_peaks, resample_poly, sosfiltfilt

from . import lineio
from .errors import DomainError, ValidationError

PROXY_NAMES = (
    "arousal",
    "f1_median_hz",
    "f2_median_hz",
    "f3_median_hz",
    "mean_f0_hz",
    "voicing_ratio",
    "spectral_flux_mean",
    "syllable_rate_per_s",
    "articulation_rate_per_s",
    "pause_ratio",
    "mean_pause_s",
)


@dataclass(frozen=True)
class AcousticsConfig:
    hop_s: float = 0.010
    f0_window_s: float = 0.040
    f0_min_hz: float = 60.0
    f0_max_hz: float = 500.0
    voicing_threshold: float = 0.45
    voicing_level_db: float = -30.0  # relative to utterance peak frame RMS
    flux_window_s: float = 0.025
    formant_rate_hz: int = 10_000
    formant_preemphasis: float = 0.97
    formant_window_s: float = 0.025
    lpc_order: int = 12
    formant_max_bandwidth_hz: float = 400.0
    formant_min_hz: float = 90.0
    formant_max_hz: float = 4500.0
    min_voiced_frames: int = 5
    silence_level_db: float = -35.0
    min_pause_s: float = 0.150
    nucleus_prominence_db: float = 2.0
    nucleus_min_gap_s: float = 0.060
    envelope_cutoff_hz: float = 10.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.samples.size == 0:
            raise ValidationError("waveform is empty")
        if self.sample_rate_hz < 8000:
            raise ValidationError("sample rate must be >= 8000 Hz")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class F0Track:
    hop_s: float
    f0_hz: np.ndarray
    voiced: np.ndarray
    periodicity: np.ndarray


@dataclass(frozen=True)
class PauseSegmentation:
    pauses: list[tuple[float, float]]
    total_s: float
    phonation_s: float


@dataclass(frozen=True)
class ProxyVector:
    arousal: float
    f1_median_hz: float | None
    f2_median_hz: float | None
    f3_median_hz: float | None
    mean_f0_hz: float
    voicing_ratio: float
    spectral_flux_mean: float
    syllable_rate_per_s: float
    articulation_rate_per_s: float
    pause_ratio: float
    mean_pause_s: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in PROXY_NAMES}

    @classmethod
    def from_dict(cls, obj: dict) -> "ProxyVector":
        return cls(**{name: obj[name] for name in PROXY_NAMES})


def load_wav(path) -> Waveform:
    """Read a mono or stereo PCM/float WAV; stereo is averaged to mono."""
    sr, data = wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValidationError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples=np.clip(x, -1.0, 1.0), sample_rate_hz=int(sr))


def save_wav(path, w: Waveform) -> None:
    wavfile.write(path, w.sample_rate_hz, np.clip(w.samples, -1.0, 1.0).astype(np.float32))


def _frames(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(x) < win:
        return np.empty((0, win))
    return sliding_window_view(x, win)[::hop]


def _frame_rms(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    fr = _frames(x, win, hop)
    return np.sqrt(np.mean(fr * fr, axis=1))


def estimate_f0(w: Waveform, cfg: AcousticsConfig = AcousticsConfig()) -> F0Track:
    """Normalized-autocorrelation pitch tracking (40 ms window, 10 ms hop).

    A frame is voiced iff its peak normalized correlation in the 60-500 Hz
    band reaches the voicing threshold and its RMS is within 30 dB of the
    loudest frame.
    """
    sr = w.sample_rate_hz
    if w.duration_s < 0.100:
        raise DomainError("pitch tracking needs at least 100 ms of audio")
    win = int(round(cfg.f0_window_s * sr))
    hop = int(round(cfg.hop_s * sr))
    frames = _frames(w.samples, win, hop)
    n_frames = frames.shape[0]
    if n_frames == 0:
        raise DomainError("waveform shorter than one analysis window")

    rms = np.sqrt(np.mean(frames * frames, axis=1))
    frames = frames - frames.mean(axis=1, keepdims=True)

    lag_min = max(2, int(math.floor(sr / cfg.f0_max_hz)))
    lag_max = min(win - 2, int(math.ceil(sr / cfg.f0_min_hz)))
    if lag_max <= lag_min:
        raise DomainError("analysis window too short for the pitch search band")

    # raw autocorrelation via FFT, then normalized cross-correlation per lag
    nfft = 1 << int(math.ceil(math.log2(2 * win)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    raw = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : lag_max + 2]
    csum = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    lags = np.arange(lag_max + 2)
    head = csum[:, win - lags]  # energy of x[0 .. win-lag)
    tail = csum[:, win][:, None] - csum[:, lags]  # energy of x[lag .. win)
    den = np.sqrt(np.maximum(head * tail, 0.0))
    nccf = np.where(den > 0, raw / np.maximum(den, 1e-300), 0.0)

    band = nccf[:, lag_min : lag_max + 1]
    peak_val = band.max(axis=1)
    # among local maxima near the global peak, favor the smallest lag
    # (picks the true period, not an octave-down multiple)
    left = nccf[:, lag_min - 1 : lag_max]
    right = nccf[:, lag_min + 1 : lag_max + 2]
    is_peak = (band >= left) & (band >= right)
    eligible = is_peak & (band >= 0.95 * peak_val[:, None])
    has_peak = eligible.any(axis=1)
    first = np.where(has_peak, np.argmax(eligible, axis=1), np.argmax(band, axis=1))
    lag0 = first + lag_min

    # parabolic interpolation around the chosen lag
    r0 = nccf[np.arange(n_frames), lag0]
    rm = nccf[np.arange(n_frames), np.maximum(lag0 - 1, 0)]
    rp = nccf[np.arange(n_frames), np.minimum(lag0 + 1, lag_max + 1)]
    denom = rm - 2.0 * r0 + rp
    safe = np.abs(denom) > 1e-12
    delta = np.zeros(n_frames)
    np.divide(0.5 * (rm - rp), denom, out=delta, where=safe)
    delta = np.clip(delta, -0.5, 0.5)
    f0 = sr / (lag0 + delta)

    periodicity = np.clip(r0, 0.0, 1.0)
    peak_rms = rms.max()
    level_ok = rms >= peak_rms * (10.0 ** (cfg.voicing_level_db / 20.0)) if peak_rms > 0 else np.zeros(n_frames, bool)
    voiced = (
        (periodicity >= cfg.voicing_threshold)
        & level_ok
        & (f0 >= cfg.f0_min_hz)
        & (f0 <= cfg.f0_max_hz)
    )
    return F0Track(
        hop_s=hop / sr,
        f0_hz=np.where(voiced, f0, 0.0),
        voiced=voiced,
        periodicity=periodicity,
    )


def voicing_ratio(t: F0Track) -> float:
    if len(t.voiced) == 0:
        raise DomainError("empty pitch track")
    return float(np.mean(t.voiced))


def spectral_flux_mean(w: Waveform, cfg: AcousticsConfig = AcousticsConfig()) -> float:
    """Mean half-wave-rectified L2 flux of L1-normalized magnitude spectra."""
    sr = w.sample_rate_hz
    win = int(round(cfg.flux_window_s * sr))
    hop = int(round(cfg.hop_s * sr))
    frames = _frames(w.samples, win, hop)
    if frames.shape[0] < 2:
        raise DomainError("spectral flux needs at least 2 analysis frames")
    window = np.hanning(win)
    mags = np.abs(np.fft.rfft(frames * window, axis=1))
    l1 = mags.sum(axis=1, keepdims=True)
    norm = np.where(l1 > 0, mags / np.maximum(l1, 1e-300), 0.0)
    diff = np.maximum(norm[1:] - norm[:-1], 0.0)
    flux = np.sqrt(np.sum(diff * diff, axis=1))
    return float(flux.mean())


def _burg_batch(frames: np.ndarray, order: int) -> np.ndarray:
    """Burg's method LPC coefficients for a batch of frames; returns (F, order+1)."""
    n_frames = frames.shape[0]
    a = np.zeros((n_frames, order + 1))
    a[:, 0] = 1.0
    f = frames.copy()
    b = frames.copy()
    for m in range(order):
        fa = f[:, 1:]
        ba = b[:, :-1]
        den = np.sum(fa * fa + ba * ba, axis=1)
        num = -2.0 * np.sum(fa * ba, axis=1)
        k = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
        f = fa + k[:, None] * ba
        b = ba + k[:, None] * fa
        prev = a[:, : m + 2].copy()
        a[:, : m + 2] = prev + k[:, None] * prev[:, ::-1]
    return a


def _batch_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of monic polynomials given as (F, order+1) rows with leading 1."""
    n_frames, width = coeffs.shape
    order = width - 1
    comp = np.zeros((n_frames, order, order))
    comp[:, 0, :] = -coeffs[:, 1:]
    idx = np.arange(order - 1)
    comp[:, idx + 1, idx] = 1.0
    return np.linalg.eigvals(comp)


def estimate_formants(w: Waveform, t: F0Track, cfg: AcousticsConfig = AcousticsConfig()):
    """Median F1-F3 over voiced frames via order-12 Burg LPC at 10 kHz.

    Returns (f1, f2, f3) or None when too few voiced frames (or no frame
    yields three in-range resonances).
    """
    voiced_idx = np.flatnonzero(t.voiced)
    if len(voiced_idx) < cfg.min_voiced_frames:
        return None
    fs = cfg.formant_rate_hz
    g = math.gcd(fs, w.sample_rate_hz)
    x = resample_poly(w.samples, fs // g, w.sample_rate_hz // g)
    x = np.concatenate([[x[0] * (1 - cfg.formant_preemphasis)], x[1:] - cfg.formant_preemphasis * x[:-1]])

    win = int(round(cfg.formant_window_s * fs))
    starts = np.round(voiced_idx * t.hop_s * fs).astype(int)
    starts = starts[starts + win <= len(x)]
    if len(starts) < cfg.min_voiced_frames:
        return None
    frames = x[starts[:, None] + np.arange(win)[None, :]] * np.hamming(win)

    a = _burg_batch(frames, cfg.lpc_order)
    roots = _batch_roots(a)

    f1s, f2s, f3s = [], [], []
    for row in roots:
        row = row[np.imag(row) > 1e-9]
        freqs = np.angle(row) * fs / (2.0 * np.pi)
        mags = np.abs(row)
        bws = -(fs / np.pi) * np.log(np.maximum(mags, 1e-300))
        ok = (bws < cfg.formant_max_bandwidth_hz) & (freqs >= cfg.formant_min_hz) & (freqs <= cfg.formant_max_hz)
        cand = np.sort(freqs[ok])
        if len(cand) >= 3:
            f1s.append(cand[0])
            f2s.append(cand[1])
            f3s.append(cand[2])
    if len(f1s) < cfg.min_voiced_frames:
        return None
    return float(np.median(f1s)), float(np.median(f2s)), float(np.median(f3s))


def segment_pauses(w: Waveform, cfg: AcousticsConfig = AcousticsConfig()) -> PauseSegmentation:
    """Energy-based pause detection: silent runs >= 150 ms, peak-relative threshold."""
    if w.duration_s < 0.300:
        raise DomainError("pause segmentation needs at least 300 ms of audio")
    sr = w.sample_rate_hz
    win = int(round(cfg.flux_window_s * sr))
    hop = int(round(cfg.hop_s * sr))
    rms = _frame_rms(w.samples, win, hop)
    total_s = w.duration_s
    peak = rms.max()
    if peak > 0:
        silent = rms < peak * (10.0 ** (cfg.silence_level_db / 20.0))
    else:
        silent = np.ones(len(rms), dtype=bool)

    hop_s = hop / sr
    win_s = win / sr
    pauses = []
    i = 0
    n = len(silent)
    while i < n:
        if not silent[i]:
            i += 1
            continue
        j = i
        while j < n and silent[j]:
            j += 1
        # a silent run [i, j) spans frame windows, so the underlying silence
        # lies between (i-1)*hop + win and j*hop + win; midpoint estimates
        # keep the boundary error within half a hop on each side
        start = 0.0 if i == 0 else i * hop_s - hop_s / 2.0
        end = total_s if j == n else (j - 1) * hop_s + win_s + hop_s / 2.0
        if end - start >= cfg.min_pause_s:
            pauses.append((start, min(end, total_s)))
        i = j
    pause_total = sum(e - s for s, e in pauses)
    return PauseSegmentation(pauses=pauses, total_s=total_s, phonation_s=max(total_s - pause_total, 0.0))


def syllable_nuclei(w: Waveform, seg: PauseSegmentation, cfg: AcousticsConfig = AcousticsConfig()):
    """Count intensity-envelope peaks outside pauses; return (syllable_rate, articulation_rate)."""
    if w.duration_s < 0.300:
        raise DomainError("syllable detection needs at least 300 ms of audio")
    sr = w.sample_rate_hz
    # first-order section: its impulse response is monotone, so the smoothed
    # envelope cannot ring and create spurious peaks inside short gaps
    sos = butter(1, cfg.envelope_cutoff_hz / (sr / 2.0), output="sos")
    env = sosfiltfilt(sos, w.samples * w.samples)
    peak_env = env.max()
    if peak_env <= 0 or seg.phonation_s <= 0:
        return 0.0, 0.0
    env_db = 10.0 * np.log10(np.maximum(env, peak_env * 1e-10))
    peaks, _ = find_peaks(
        env_db,
        prominence=cfg.nucleus_prominence_db,
        distance=max(1, int(round(cfg.nucleus_min_gap_s * sr))),
    )
    times = peaks / sr
    in_pause = np.zeros(len(times), dtype=bool)
    for s, e in seg.pauses:
        in_pause |= (times >= s) & (times <= e)
    n_nuclei = int(np.sum(~in_pause))
    return n_nuclei / seg.total_s, n_nuclei / seg.phonation_s


def extract_proxies(record, w: Waveform, cfg: AcousticsConfig = AcousticsConfig()) -> ProxyVector:
    """Assemble the 11-value proxy vector for one utterance.

    Raises DomainError when the waveform is unusable (too short or fully
    unvoiced); formants may be absent (None) independently.
    """
    track = estimate_f0(w, cfg)
    vr = voicing_ratio(track)
    if vr == 0.0:
        raise DomainError(f"{record.id}: no voiced frames; utterance flagged")
    mean_f0 = float(np.mean(track.f0_hz[track.voiced]))
    flux = spectral_flux_mean(w, cfg)
    seg = segment_pauses(w, cfg)
    syl_rate, artic_rate = syllable_nuclei(w, seg, cfg)
    formants = estimate_formants(w, track, cfg)
    durations = [e - s for s, e in seg.pauses]
    return ProxyVector(
        arousal=float(record.arousal),
        f1_median_hz=None if formants is None else formants[0],
        f2_median_hz=None if formants is None else formants[1],
        f3_median_hz=None if formants is None else formants[2],
        mean_f0_hz=mean_f0,
        voicing_ratio=vr,
        spectral_flux_mean=flux,
        syllable_rate_per_s=syl_rate,
        articulation_rate_per_s=artic_rate,
        pause_ratio=float(sum(durations) / seg.total_s),
        mean_pause_s=float(np.mean(durations)) if durations else 0.0,
    )


def save_proxies(path, proxies: dict) -> None:
    """One line per utterance; absent formants serialize as explicit nulls."""
    lineio.write_objects(
        path, ({"id": uid, **vec.to_dict()} for uid, vec in sorted(proxies.items()))
    )


def load_proxies(path) -> dict:
    out = {}
    for obj in lineio.read_objects(path):
        out[str(obj["id"])] = ProxyVector.from_dict(obj)
    return out

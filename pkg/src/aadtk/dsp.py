"""EEG preprocessing chain and speech-feature post-processing.

EEG path: volts to microvolts, linear-phase FIR bandpass (0.5 to 32 Hz),
common average reference, Fourier resampling to 64 Hz. Speech path:
Fourier resampling to 64 Hz and PCA from 1024 to 64 dimensions, fit on
training-split rows only. Every operation is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve, resample as _fourier_resample

from .data import FeatureTensor, read_feature_file, write_feature_file

__all__ = [
    "FirFilter",
    "PcaModel",
    "volts_to_microvolts",
    "design_bandpass",
    "default_bandpass",
    "apply_filter",
    "common_average_reference",
    "resample",
    "preprocess_eeg",
    "pca_fit",
    "pca_transform",
    "save_pca",
    "load_pca",
]


@dataclass
class FirFilter:
    """Linear-phase FIR bandpass: odd tap count, symmetric coefficients."""

    taps: np.ndarray
    sample_rate_hz: float
    band: tuple

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1 or self.taps.size % 2 == 0:
            raise ValueError(f"taps must be a 1-D odd-length vector, got {self.taps.shape}")


def _unity_dc_lowpass(cutoff_hz: float, fs_hz: float, n: int) -> np.ndarray:
    # windowed sinc, normalized to exactly unit gain at DC
    m = (n - 1) / 2.0
    k = np.arange(n) - m
    h = 2.0 * cutoff_hz / fs_hz * np.sinc(2.0 * cutoff_hz / fs_hz * k)
    h *= np.hamming(n)
    return h / h.sum()


def design_bandpass(
    fs_hz: float,
    low_hz: float = 0.5,
    high_hz: float = 32.0,
    transition_low_hz: Optional[float] = None,
    transition_high_hz: Optional[float] = None,
) -> FirFilter:
    """Windowed-sinc (Hamming) bandpass whose -6 dB points sit half a
    transition width outside the requested band edges.

    Default transitions: min(max(0.25*low, 2 Hz), low) below the low edge
    and 0.25*high above the high edge. The tap count comes from the
    narrower transition: ceil(3.3 / (transition/fs)), rounded up to odd.
    """
    if not (0.0 < low_hz < high_hz < fs_hz / 2.0):
        raise ValueError(
            f"need 0 < low < high < fs/2, got low={low_hz}, high={high_hz}, fs={fs_hz}"
        )
    if transition_low_hz is None:
        transition_low_hz = min(max(0.25 * low_hz, 2.0), low_hz)
    if transition_high_hz is None:
        transition_high_hz = 0.25 * high_hz
    if transition_low_hz <= 0 or transition_high_hz <= 0:
        raise ValueError("transition widths must be positive")
    if high_hz + transition_high_hz / 2.0 >= fs_hz / 2.0:
        raise ValueError(
            f"upper transition band reaches past Nyquist at fs={fs_hz} Hz"
        )
    narrowest = min(transition_low_hz, transition_high_hz) / fs_hz
    n = int(math.ceil(3.3 / narrowest))
    if n % 2 == 0:
        n += 1
    lo_cut = low_hz - transition_low_hz / 2.0
    hi_cut = high_hz + transition_high_hz / 2.0
    taps = _unity_dc_lowpass(hi_cut, fs_hz, n) - _unity_dc_lowpass(lo_cut, fs_hz, n)
    return FirFilter(taps=taps, sample_rate_hz=float(fs_hz), band=(low_hz, high_hz))


_BANDPASS_CACHE: dict = {}


def default_bandpass(fs_hz: float) -> FirFilter:
    """The 0.5 to 32 Hz EEG bandpass for ``fs_hz``, designed once per rate."""
    key = float(fs_hz)
    if key not in _BANDPASS_CACHE:
        _BANDPASS_CACHE[key] = design_bandpass(key)
    return _BANDPASS_CACHE[key]


def volts_to_microvolts(x: FeatureTensor) -> FeatureTensor:
    return x.with_data(x.data * np.asarray(1e6, dtype=x.data.dtype), unit="uV")


def apply_filter(x: FeatureTensor, f: FirFilter) -> FeatureTensor:
    """Zero-phase filtering: centered convolution with the symmetric taps,
    zero padding at the edges. Output keeps the input length."""
    if x.sample_rate_hz != f.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: tensor {x.sample_rate_hz} Hz, filter {f.sample_rate_hz} Hz"
        )
    y = fftconvolve(x.data.astype(np.float64, copy=False), f.taps[None, :], mode="same", axes=1)
    return x.with_data(y.astype(x.data.dtype))


def common_average_reference(x: FeatureTensor) -> FeatureTensor:
    """Subtract the instantaneous mean over channels at every time step."""
    if x.data.shape[0] < 2:
        raise ValueError(f"need at least 2 channels, got {x.data.shape[0]}")
    return x.with_data(x.data - x.data.mean(axis=0, keepdims=True))


def resample(x: FeatureTensor, fs_out_hz: float) -> FeatureTensor:
    """Fourier-domain resampling to round(T * fs_out/fs_in) samples."""
    if fs_out_hz <= 0:
        raise ValueError(f"target rate must be positive, got {fs_out_hz}")
    n_out = int(round(x.data.shape[1] * fs_out_hz / x.sample_rate_hz))
    y = _fourier_resample(x.data, n_out, axis=1)
    return x.with_data(y.astype(x.data.dtype), sample_rate_hz=float(fs_out_hz))


def preprocess_eeg(
    x: FeatureTensor, filt: Optional[FirFilter] = None, fs_out_hz: float = 64.0
) -> FeatureTensor:
    """Full EEG chain: volts to microvolts, bandpass, common average
    reference, resample. Deterministic: same input, bit-identical output."""
    if filt is None:
        filt = default_bandpass(x.sample_rate_hz)
    y = volts_to_microvolts(x)
    y = apply_filter(y, filt)
    y = common_average_reference(y)
    return resample(y, fs_out_hz)


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    """Mean vector plus top-k orthonormal components (rows) and their
    explained variances, non-increasing."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]


def pca_fit(x_rows: np.ndarray, k: int = 64) -> PcaModel:
    """Mean-centered SVD; keeps the top-k right singular vectors.

    Sign convention: each component's largest-magnitude element is made
    positive, so refits of the same data agree exactly.
    """
    x = np.asarray(x_rows, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"need a 2-D row matrix, got shape {x.shape}")
    n, d = x.shape
    if n <= k:
        raise ValueError(f"need more rows than components: n={n}, k={k}")
    if k < 1 or k > d:
        raise ValueError(f"k={k} out of range for {d}-dimensional rows")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    components = vt[:k]
    flip = components[np.arange(k), np.abs(components).argmax(axis=1)] < 0
    components = np.where(flip[:, None], -components, components)
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=s[:k] ** 2 / (n - 1),
    )


def pca_transform(m: PcaModel, x_rows: np.ndarray) -> np.ndarray:
    x = np.asarray(x_rows)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise ValueError(
            f"rows have {x.shape[-1] if x.ndim else 0} columns, model expects {m.input_dim}"
        )
    return (x - m.mean) @ m.components.T


def save_pca(dir_path, m: PcaModel) -> None:
    """Store the model as three feature files in ``dir_path``."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    write_feature_file(d / "pca_mean.ftf", FeatureTensor(m.mean[None, :], 0.0, source="pca mean"))
    write_feature_file(d / "pca_components.ftf", FeatureTensor(m.components, 0.0, source="pca components"))
    write_feature_file(
        d / "pca_variance.ftf", FeatureTensor(m.explained_variance[None, :], 0.0, source="pca variance")
    )


def load_pca(dir_path) -> PcaModel:
    d = Path(dir_path)
    mean = read_feature_file(d / "pca_mean.ftf").data[0]
    components = read_feature_file(d / "pca_components.ftf").data
    variance = read_feature_file(d / "pca_variance.ftf").data[0]
    return PcaModel(
        mean=mean.astype(np.float64),
        components=components.astype(np.float64),
        explained_variance=variance.astype(np.float64),
    )

"""Chirp spread-spectrum waveforms and the dechirp decoder.

A symbol is an upchirp whose instantaneous frequency sweeps linearly from
-bw/2 to +bw/2 over T = 2**sf / bw seconds.  Tags answer on a sub-carrier
shift f0; throughout the package frequency offsets rotate the baseband as
exp(-j*2*pi*f*t) (phase-lag convention), which is the sign produced by a
propagation phase exp(-j*2*pi*f*tau) with growing delay.

Decoding multiplies the received buffer by a synthesized downchirp whose
frequency runs from bw/2 + f0 down to -bw/2 + f0 and evaluates the
positive-exponent transform S[b] = sum_n p[n] * exp(+j*2*pi*n*b/N).  Under
these conventions a path delay tau lands on bin tau*bw and a shift f lands
on bin f*T, both positive, and the two add.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChirpConfig:
    """Waveform parameters for one decoded channel.

    Attributes
    ----------
    sf : spreading factor, 6..12
    bw : sweep bandwidth in Hz (up to 500 kHz)
    fc : RF center frequency of the hop in Hz (phase bookkeeping only)
    fs : baseband sample rate in Hz, must cover bw and the tag shifts
    f0 : tag sub-carrier shift in Hz for the channel being decoded
    """

    sf: int
    bw: float
    fc: float
    fs: float
    f0: float = 0.0

    def __post_init__(self):
        if not 6 <= int(self.sf) <= 12:
            raise ValueError(f"spreading factor {self.sf} outside 6..12")
        if self.bw <= 0 or self.bw > 500e3:
            raise ValueError(f"bandwidth {self.bw} outside (0, 500 kHz]")
        if self.fs < self.bw:
            raise ValueError("sample rate below sweep bandwidth")
        if self.fc <= 0:
            raise ValueError("carrier frequency must be positive")

    @property
    def duration(self) -> float:
        """Symbol length T in seconds."""
        return (2 ** self.sf) / self.bw

    @property
    def n_samples(self) -> int:
        n = int(round(self.duration * self.fs))
        # never shorter than the chip count, or bins would alias symbols
        return max(n, 2 ** self.sf)

    @property
    def bin_hz(self) -> float:
        """Frequency step of one transform bin (1/T when fs*T is integral)."""
        return self.fs / self.n_samples

    @property
    def slope(self) -> float:
        """Sweep rate k = bw/T in Hz/s."""
        return self.bw / self.duration


@dataclass(frozen=True)
class IqBuffer:
    """Complex baseband samples with their rate and start time."""

    samples: np.ndarray
    fs: float
    t0: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise ValueError("IqBuffer samples must be one-dimensional")
        if not np.iscomplexobj(s):
            s = s.astype(np.complex128)
        object.__setattr__(self, "samples", s)
        if self.fs <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class DechirpResult:
    """Spectrum of one dechirped symbol.

    ``peak_bin`` is the integer argmax of ``|spectrum|``; ``peak_phase`` and
    ``peak_magnitude`` are evaluated at the interpolated (fractional) peak,
    not the integer bin, so off-grid tones do not pick up the half-turn
    phase ramp of the nearest bin.
    """

    spectrum: np.ndarray
    peak_bin: int
    peak_phase: float
    peak_magnitude: float


def _upchirp_phase(cfg: ChirpConfig, t: np.ndarray) -> np.ndarray:
    # phase of the periodic upchirp, defined for all t via the symbol period
    tm = np.mod(t, cfg.duration)
    return 2.0 * np.pi * (-0.5 * cfg.bw * tm + 0.5 * cfg.slope * tm * tm)


def make_upchirp(cfg: ChirpConfig) -> IqBuffer:
    """One baseband upchirp symbol; first sample has zero phase."""
    t = np.arange(cfg.n_samples) / cfg.fs
    return IqBuffer(np.exp(1j * _upchirp_phase(cfg, t)), cfg.fs, 0.0)


def make_downchirp(cfg: ChirpConfig) -> IqBuffer:
    """Conjugate-sweep template centered on the tag shift.

    Frequency runs from bw/2 + f0 down to -bw/2 + f0; with f0 = 0 this is
    exactly the complex conjugate of :func:`make_upchirp`.
    """
    t = np.arange(cfg.n_samples) / cfg.fs
    phase = 2.0 * np.pi * ((0.5 * cfg.bw + cfg.f0) * t - 0.5 * cfg.slope * t * t)
    return IqBuffer(np.exp(1j * phase), cfg.fs, 0.0)


def make_shifted_upchirp(
    cfg: ChirpConfig,
    delay: float = 0.0,
    shift_hz: float = 0.0,
    phase0: float = 0.0,
    amplitude: float = 1.0,
    n_samples: int | None = None,
    periodic: bool = True,
) -> IqBuffer:
    """Synthesize a delayed, frequency-shifted symbol analytically.

    The symbol stream is periodic, so a delay wraps the tail of the previous
    symbol into the head of the window; periodic=False instead leaves the
    pre-arrival window silent (first symbol after a channel hop).  The shift
    follows the package's phase-lag convention exp(-j*2*pi*shift_hz*t).
    """
    n = cfg.n_samples if n_samples is None else int(n_samples)
    t = np.arange(n) / cfg.fs
    ph = _upchirp_phase(cfg, t - delay) - 2.0 * np.pi * shift_hz * t + phase0
    samples = amplitude * np.exp(1j * ph)
    if not periodic:
        samples = np.where(t < delay, 0.0, samples)
    return IqBuffer(samples, cfg.fs, 0.0)


def dechirp(rx: IqBuffer, cfg: ChirpConfig) -> DechirpResult:
    """Decode one symbol window against the cfg.f0 downchirp template."""
    n = cfg.n_samples
    if len(rx) < n:
        raise ValueError(f"buffer holds {len(rx)} samples, need {n}")
    if abs(rx.fs - cfg.fs) > 1e-6 * cfg.fs:
        raise ValueError("buffer sample rate does not match config")
    product = rx.samples[:n] * make_downchirp(cfg).samples
    # positive-exponent DFT: S[b] = sum_n p[n] exp(+2j pi n b / N)
    spectrum = np.fft.ifft(product) * n
    peak_bin = int(np.argmax(np.abs(spectrum)))
    frac, phase, mag = fractional_peak(spectrum, product=product)
    return DechirpResult(spectrum=spectrum, peak_bin=peak_bin,
                         peak_phase=phase, peak_magnitude=mag)


def _eval_tone(product: np.ndarray, x: float) -> complex:
    """Evaluate the positive-exponent transform at fractional bin ``x``."""
    n = product.shape[0]
    k = np.arange(n)
    return complex(np.dot(product, np.exp(2j * np.pi * k * x / n)))


def fractional_peak(
    spectrum: np.ndarray,
    product: np.ndarray | None = None,
    k0: int | None = None,
) -> tuple[float, float, float]:
    """Sub-bin peak location, phase and magnitude of a dechirped spectrum.

    Uses the two-bin ratio of the rectangular-window kernel, which is exact
    for a clean single tone (a parabola on ``|S|`` is biased by up to a few
    hundredths of a bin, which is too coarse for the pair-cancellation and
    phase contracts downstream).  Returns the location as a signed bin in
    [-N/2, N/2), with phase and magnitude evaluated at that fractional
    position.  ``k0`` pins the integer peak (multi-tone spectra); default is
    the global argmax.
    """
    s = np.asarray(spectrum)
    n = s.shape[0]
    if k0 is None:
        k0 = int(np.argmax(np.abs(s)))
    else:
        k0 = int(k0) % n
    right = s[(k0 + 1) % n]
    left = s[(k0 - 1) % n]
    center = s[k0]
    # kernel phase advance between adjacent bins of a length-n window
    kphase = np.exp(-1j * np.pi * (n - 1) / n)
    if abs(right) >= abs(left):
        rho = np.real(right / center * kphase)
        rho = max(rho, 0.0)
        delta = (n / np.pi) * np.arctan2(
            rho * np.sin(np.pi / n), 1.0 + rho * np.cos(np.pi / n))
    else:
        rho = np.real(left / center * np.conj(kphase))
        rho = max(rho, 0.0)
        delta = -(n / np.pi) * np.arctan2(
            rho * np.sin(np.pi / n), 1.0 + rho * np.cos(np.pi / n))
    x = k0 + delta
    if product is not None:
        val = _eval_tone(product, x)
    else:
        # fall back to the Dirichlet-kernel phase correction at the argmax
        val = center * np.exp(1j * np.pi * delta * (n - 1) / n)
    if x >= n / 2:
        x -= n
    return float(x), float(np.angle(val)), float(abs(val))


def spectrum_median_magnitude(spectrum: np.ndarray) -> float:
    return float(np.median(np.abs(spectrum)))


def realign(rx: IqBuffer, bin_offset: int, cfg: ChirpConfig) -> IqBuffer:
    """Advance a buffer by an integer number of decoded bins.

    A symbol that decoded ``bin_offset`` bins late starts that many chip
    periods into the buffer; dropping the corresponding samples moves its
    peak back to bin zero.  Negative offsets pad the front with zeros.
    """
    bin_offset = int(bin_offset)
    n = cfg.n_samples
    if abs(bin_offset) >= n:
        raise ValueError(f"bin offset {bin_offset} out of range for {n} bins")
    shift = int(round(bin_offset * cfg.fs / cfg.bw))
    if shift == 0:
        return rx
    if shift > 0:
        if shift >= len(rx):
            raise ValueError("offset larger than the buffer")
        samples = rx.samples[shift:]
        return IqBuffer(samples, rx.fs, rx.t0 + shift / rx.fs)
    pad = np.zeros(-shift, dtype=np.complex128)
    return IqBuffer(np.concatenate([pad, rx.samples]), rx.fs, rx.t0 + shift / rx.fs)


def add_noise(rx: IqBuffer, snr_db: float, rng: np.random.Generator) -> IqBuffer:
    """Add complex white noise for a unit-amplitude signal at snr_db."""
    sigma = 10.0 ** (-snr_db / 20.0)
    noise = rng.normal(scale=sigma / np.sqrt(2.0), size=(2, len(rx)))
    return IqBuffer(rx.samples + noise[0] + 1j * noise[1], rx.fs, rx.t0)

"""
Artifact Removal Service - cleans stimulation artifacts from grid EMG
LF: per-stimulus peak tracking and baseline replacement
HF: block template averaging, aligned subtraction and outlier smoothing
"""
from typing import Optional, Tuple

import numpy as np
import structlog

from app.errors import DataError, ParameterError
from app.models.emg import EmgGridRecord, RecordLabel
from app.models.removal import HfRemovalParams, LfRemovalParams, RemovalReport

logger = structlog.get_logger(__name__)


def detect_lf_artifacts(channel: np.ndarray, sample_rate: float, params: LfRemovalParams) -> np.ndarray:
    """
    Track stimulus artifacts through one channel

    The first artifact is the largest absolute sample within the first
    interstimulus interval. A coarse pass takes the largest sample of every
    interval-wide window anchored on it; the median of those peaks fixes the
    stimulus phase. Each artifact is then the largest absolute sample within
    the search margin around its scheduled time, so per-event jitter does not
    accumulate from one detection to the next.

    Returns:
        detected event times in seconds, increasing
    """
    channel = np.asarray(channel)
    n = len(channel)
    interval = sample_rate / params.stim_frequency
    if n < interval:
        raise DataError("record is shorter than one interstimulus interval",
                        samples=n, interval_samples=interval)
    margin = params.search_margin * sample_rate
    magnitude = np.abs(channel)

    first = int(np.argmax(magnitude[:int(np.ceil(interval))]))
    k = np.arange(-int(first // interval) - 1, int((n - first) // interval) + 2)
    coarse = []
    for centre in first + k * interval:
        lo = max(0, int(np.ceil(centre - interval / 2)))
        hi = min(n, int(np.ceil(centre + interval / 2)))
        if hi > lo:
            coarse.append(lo + int(np.argmax(magnitude[lo:hi])))
    coarse = np.asarray(coarse, dtype=np.float64)
    phase = float(np.median(coarse - np.rint((coarse - first) / interval) * interval))

    k = np.arange(int(np.floor((-margin - phase) / interval)), int(np.ceil((n - phase) / interval)) + 1)
    scheduled = phase + k * interval
    events = []
    for centre in scheduled[(scheduled > -margin) & (scheduled < n)]:
        lo = max(0, int(np.ceil(centre - margin)))
        hi = min(n, int(np.floor(centre + margin)) + 1)
        if hi > lo:
            events.append(lo + int(np.argmax(magnitude[lo:hi])))
    return np.unique(np.asarray(events, dtype=np.int64)).astype(np.float64) / sample_rate


def remove_lf(emg: EmgGridRecord, params: LfRemovalParams, seed: int) -> Tuple[EmgGridRecord, RemovalReport]:
    """
    Replace a window centred on every detected artifact with rest-state EMG

    Samples outside the replacement windows are copied unchanged.
    """
    baseline = np.asarray(params.baseline)
    if baseline.ndim != 2 or baseline.shape[0] != emg.n_channels:
        raise DataError("baseline must hold one rest recording per channel",
                        channels=emg.n_channels, baseline_shape=list(baseline.shape))
    half = int(round(params.replace_window * emg.sample_rate / 2.0))
    width = 2 * half + 1
    if baseline.shape[1] < width:
        raise DataError("baseline is shorter than one replacement window", baseline_samples=baseline.shape[1])

    rng = np.random.default_rng(seed)
    cleaned = emg.channels.copy()
    report = RemovalReport(method="lf", sample_rate=emg.sample_rate)
    for ch in range(emg.n_channels):
        events = np.rint(detect_lf_artifacts(emg.channels[ch], emg.sample_rate, params) * emg.sample_rate)
        report.event_counts.append(len(events))
        starts = rng.integers(0, baseline.shape[1] - width + 1, size=len(events))
        for event, source in zip(events.astype(np.int64), starts):
            lo, hi = event - half, event + half + 1
            clip_lo, clip_hi = max(lo, 0), min(hi, emg.length)
            cleaned[ch, clip_lo:clip_hi] = baseline[ch, source + clip_lo - lo:source + clip_hi - lo]

    logger.info("LF artifacts removed", channels=emg.n_channels, mean_events=float(np.mean(report.event_counts)))
    return emg.with_channels(cleaned, RecordLabel.CLEAN), report


def extract_hf_template(block: np.ndarray, segment_samples: int) -> np.ndarray:
    """Average of the consecutive segments of a block; the artifact is periodic at the segment length"""
    block = np.asarray(block, dtype=np.float64)
    count = len(block) // segment_samples
    if count < 2:
        raise DataError("template extraction needs at least two segments", segments=count)
    return block[:count * segment_samples].reshape(count, segment_samples).mean(axis=0)


def align_and_subtract(segment: np.ndarray, template: np.ndarray, max_shift: int = 10) -> Tuple[np.ndarray, int, float]:
    """
    Fit a shifted and scaled template to a segment and remove it

    The shift is searched exhaustively over integer samples in
    [-max_shift, max_shift]; for each shift the least-squares gain is exact.
    Shifts are circular since segments span whole artifact periods.

    Returns:
        (residual, shift, gain)
    """
    segment = np.asarray(segment, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    if segment.shape != template.shape:
        raise ParameterError("segment and template lengths differ",
                             segment=len(segment), template=len(template))
    best_shift, best_gain, best_score = 0, 0.0, -np.inf
    energy = float(np.dot(template, template))
    if energy <= 0:
        return segment.copy(), 0, 0.0
    for shift in range(-max_shift, max_shift + 1):
        shifted = np.roll(template, shift)
        projection = float(np.dot(segment, shifted))
        score = projection * projection / energy
        if score > best_score + 1e-15 * max(1.0, abs(score)):
            best_shift, best_gain, best_score = shift, projection / energy, score
    return segment - best_gain * np.roll(template, best_shift), best_shift, best_gain


def smooth_outliers(v: np.ndarray, sigma: float = 3.0) -> Tuple[np.ndarray, bool]:
    """
    Replace samples outside mean +/- sigma*std with their bracketing inliers' average

    Statistics come from the input vector once. Boundary outliers take their
    single nearest inlier.

    Returns:
        (smoothed vector, flagged); flagged is True when every sample is an outlier
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ParameterError("cannot smooth an empty vector")
    std = v.std()
    if std == 0:
        logger.warning("Constant vector, nothing to smooth", size=int(v.size))
        return v.copy(), False
    outlier = np.abs(v - v.mean()) > sigma * std
    if not outlier.any():
        return v.copy(), False
    if outlier.all():
        return v.copy(), True

    index = np.arange(v.size)
    inlier_index = np.where(outlier, -1, index)
    previous = np.maximum.accumulate(inlier_index)
    following = np.where(outlier, v.size, index)
    following = np.minimum.accumulate(following[::-1])[::-1]

    result = v.copy()
    targets = np.flatnonzero(outlier)
    prev_idx, next_idx = previous[targets], following[targets]
    has_prev, has_next = prev_idx >= 0, next_idx < v.size
    both = has_prev & has_next
    result[targets[both]] = 0.5 * (v[prev_idx[both]] + v[next_idx[both]])
    only_prev = has_prev & ~has_next
    result[targets[only_prev]] = v[prev_idx[only_prev]]
    only_next = ~has_prev & has_next
    result[targets[only_next]] = v[next_idx[only_next]]
    return result, False


def _clean_block(block: np.ndarray, segment_samples: int, params: HfRemovalParams) -> Tuple[np.ndarray, bool]:
    template = extract_hf_template(block, segment_samples)
    count = len(block) // segment_samples
    pieces = [
        align_and_subtract(block[i * segment_samples:(i + 1) * segment_samples], template, params.max_shift)[0]
        for i in range(count)
    ]
    return smooth_outliers(np.concatenate(pieces), params.outlier_sigma)


def remove_hf(emg: EmgGridRecord, params: Optional[HfRemovalParams] = None) -> Tuple[EmgGridRecord, RemovalReport]:
    """
    Template-subtract the HF artifact from every channel

    Each channel is cut into blocks of `group` segments. A trailing block with at
    least two whole segments is processed with what it has; anything shorter
    passes through unchanged and is flagged.
    """
    params = params or HfRemovalParams()
    if abs(params.step - params.window) > 1e-12:
        raise ParameterError("only non-overlapping windows are supported", window=params.window, step=params.step)
    segment_samples = int(round(params.window * emg.sample_rate))
    block_samples = segment_samples * params.group
    report = RemovalReport(method="hf", sample_rate=emg.sample_rate)
    cleaned = emg.channels.copy()

    for start in range(0, emg.length, block_samples):
        stop = min(emg.length, start + block_samples)
        usable = ((stop - start) // segment_samples) * segment_samples
        if usable // segment_samples < 2:
            report.passthrough_samples += stop - start
            report.flag("trailing partial block passed through")
            logger.warning("HF block too short, passed through", start_s=start / emg.sample_rate,
                           samples=stop - start)
            continue
        if usable < stop - start:
            report.passthrough_samples += stop - start - usable
        report.blocks_processed += 1
        for ch in range(emg.n_channels):
            block = emg.channels[ch, start:start + usable].astype(np.float64)
            result, flagged = _clean_block(block, segment_samples, params)
            if flagged:
                report.flag(f"channel {ch}: every sample was an outlier")
            cleaned[ch, start:start + usable] = result

    logger.info("HF artifacts removed", channels=emg.n_channels, blocks=report.blocks_processed,
                passthrough_samples=report.passthrough_samples)
    return emg.with_channels(cleaned, RecordLabel.CLEAN), report


def attenuation_db(contaminated: np.ndarray, cleaned: np.ndarray, clean: np.ndarray) -> np.ndarray:
    """Per-channel artifact attenuation: injected artifact energy over residual error energy"""
    contaminated, cleaned, clean = (np.asarray(x, dtype=np.float64) for x in (contaminated, cleaned, clean))
    if contaminated.ndim == 1:
        contaminated, cleaned, clean = contaminated[None], cleaned[None], clean[None]
    before = np.sum((contaminated - clean) ** 2, axis=1)
    after = np.sum((cleaned - clean) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.where(after > 0, before / np.maximum(after, 1e-300), np.inf))


def score_removal(report: RemovalReport, contaminated: EmgGridRecord, cleaned: EmgGridRecord,
                  clean: EmgGridRecord) -> RemovalReport:
    """Fill the report's attenuation figures from ground truth"""
    per_channel = attenuation_db(contaminated.channels, cleaned.channels, clean.channels)
    report.attenuation_db = [float(x) if np.isfinite(x) else None for x in per_channel]
    before = float(np.sum((contaminated.channels.astype(np.float64) - clean.channels) ** 2))
    after = float(np.sum((cleaned.channels.astype(np.float64) - clean.channels) ** 2))
    report.overall_attenuation_db = float(10.0 * np.log10(before / after)) if after > 0 else None
    return report

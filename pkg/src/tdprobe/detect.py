"""Traffic-discrimination detection over slotted throughput series.

The pipeline for one session:

  1. Pick the comparison horizon: the earliest time at which any service
     finished its download (capped at the configured deadline).  Detection
     needs at least one finished download; otherwise the network itself was
     too bad to compare anything and every verdict is inconclusive.
  2. Cut every service's cumulative byte samples into the same grid of
     fixed-duration slots and average throughput per slot.
  3. Mark a service "low" in a slot when it trails the slot's best service
     by at least delta Mbps.
  4. Throughput-consistency check (TCD): a service low in at least
     (1-a)*N_T slots is discriminated; a service low in [(1-2a)*N_T,
     (1-a)*N_T) slots is discriminated only if it is alone in that range,
     since several services sharing it points at congestion, not targeting.
  5. Connectivity check (CSD): at least b connection breaks flags
     discrimination by forced re-fetching.
  6. Combine: TCD wins when it fires; otherwise CSD decides, but only
     counts when the download could not finish.

Also in this module: the synthetic session generator and the threshold
calibration grid used to pick (delta, a, slot_seconds).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ByteSample,
    DetectionConfig,
    ServiceProfile,
    ServiceRun,
    SessionLog,
    SlotSeries,
    TD_INCONCLUSIVE,
    TD_NO,
    TD_YES,
    Verdict,
    make_user_id,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Slotting
# ---------------------------------------------------------------------------

def compute_slot_series(
    run: ServiceRun, slot_seconds: float, horizon_s: float
) -> SlotSeries:
    """Average throughput of `run` over ceil(horizon/slot) fixed slots.

    Cumulative bytes are linearly interpolated at slot boundaries, which is
    robust to the irregular sampling cadence of burst arrivals.  Slots after
    the last sample carry 0.
    """
    if not run.samples:
        raise ValueError(f"{run.service.name}: no samples to slot")
    if slot_seconds <= 0 or horizon_s <= 0:
        raise ValueError("slot_seconds and horizon_s must be positive")
    n_t = math.ceil(horizon_s / slot_seconds)
    ts = np.array([s.t for s in run.samples], dtype=float)
    bs = np.array([s.cum_bytes for s in run.samples], dtype=float)
    if ts[0] > 0.0:
        # downloads start at the shared t=0 with nothing received
        ts = np.concatenate(([0.0], ts))
        bs = np.concatenate(([0.0], bs))
    bounds = np.arange(n_t + 1, dtype=float) * slot_seconds
    cum = np.interp(bounds, ts, bs)
    per_slot = np.diff(cum)
    thr = per_slot * 8.0 / slot_seconds / 1e6
    # guard against tiny negative values from float noise
    thr = np.maximum(thr, 0.0)
    return SlotSeries(
        service=run.service.name,
        slot_seconds=slot_seconds,
        throughput=tuple(thr.tolist()),
    )


def mark_low_slots(
    series_set: list[SlotSeries], delta_mbps: float
) -> dict[str, tuple[tuple[bool, ...], int]]:
    """Per-service low-slot masks and counts.

    A service is low in slot k when the best service of that slot beats it
    by at least delta Mbps.  Only gaps matter: adding a constant to every
    service in a slot does not change the marking.
    """
    if not series_set:
        raise ValueError("empty series set")
    n_t = series_set[0].n_t
    for s in series_set:
        if s.n_t != n_t:
            raise ValueError(
                f"misaligned slot series: {s.service} has {s.n_t} slots, expected {n_t}"
            )
    grid = np.array([s.throughput for s in series_set], dtype=float)
    slot_max = grid.max(axis=0)
    low = (slot_max - grid) >= delta_mbps
    out: dict[str, tuple[tuple[bool, ...], int]] = {}
    for i, s in enumerate(series_set):
        mask = tuple(bool(x) for x in low[i])
        out[s.service] = (mask, int(low[i].sum()))
    return out


# ---------------------------------------------------------------------------
# Core detectors
# ---------------------------------------------------------------------------

def tcd(n_t: int, n_l: int, n_s: int, a: float) -> bool:
    """Throughput-consistency detection.

    True when the service trails in at least (1-a)*n_t slots, or when its
    low-slot count sits in the softer [(1-2a)*n_t, (1-a)*n_t) range and no
    other service shares that range (n_s counts the service itself).
    """
    if not (0.0 < a < 0.5):
        raise ValueError(f"a must be in (0, 0.5), got {a}")
    if n_t < 1:
        raise ValueError(f"n_t must be >= 1, got {n_t}")
    if not (0 <= n_l <= n_t):
        raise ValueError(f"n_l must be in [0, {n_t}], got {n_l}")
    hard = (1.0 - a) * n_t
    soft = (1.0 - 2.0 * a) * n_t
    if n_l >= hard:
        return True
    if soft <= n_l < hard:
        if n_s < 1:
            raise ValueError("n_s must count the service under test itself")
        return n_s == 1
    return False


def soft_range_contains(n_t: int, n_l: int, a: float) -> bool:
    """Whether a low-slot count falls in the soft range [(1-2a)n_t, (1-a)n_t)."""
    return (1.0 - 2.0 * a) * n_t <= n_l < (1.0 - a) * n_t


def csd(n_cb: int, b: int) -> bool:
    """Connectivity-status detection: break count at or above the threshold."""
    if n_cb < 0:
        raise ValueError(f"n_cb must be >= 0, got {n_cb}")
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    return n_cb >= b


def combine_verdict(tcd_flag: bool, csd_flag: bool, completed: bool) -> str:
    """Final decision from both detectors plus the download status.

    A throughput verdict always wins.  A pure connectivity verdict only
    counts when the breaks actually prevented the download from finishing.
    """
    if tcd_flag:
        return TD_YES
    if csd_flag:
        return TD_NO if completed else TD_YES
    return TD_NO


# ---------------------------------------------------------------------------
# Whole-session detection
# ---------------------------------------------------------------------------

def session_horizon(session: SessionLog) -> float | None:
    """Comparison horizon for a session, or None when nothing completed.

    The horizon ends at the earliest finished download: beyond that point
    the finished service stops transmitting, so later slots carry no
    cross-service information.  Capped at the configured deadline.
    """
    ends = [r.end_t for r in session.runs if r.completed and r.samples]
    if not ends:
        return None
    return min(min(ends), session.config.max_duration_s)


def detect_session(
    session: SessionLog, config: DetectionConfig | None = None
) -> list[Verdict]:
    """Run the full detection pipeline on one session.

    `config` overrides the session's stored thresholds (used by
    calibration); the download contract (sizes, deadline) always comes from
    the session itself.
    """
    cfg = session.config if config is None else config
    horizon = session_horizon(session)
    if horizon is None or horizon <= 0:
        return [
            Verdict(
                service=r.service.name,
                tcd=False,
                csd=False,
                td_detected=TD_INCONCLUSIVE,
            )
            for r in session.runs
        ]
    series = [
        compute_slot_series(r, cfg.slot_seconds, horizon) for r in session.runs
    ]
    marks = mark_low_slots(series, cfg.delta_mbps)
    n_t = series[0].n_t
    n_low = {name: n_l for name, (_, n_l) in marks.items()}
    n_s = sum(
        1 for n_l in n_low.values() if soft_range_contains(n_t, n_l, cfg.slot_fraction_a)
    )
    verdicts = []
    for run in session.runs:
        name = run.service.name
        t_flag = tcd(n_t, n_low[name], n_s, cfg.slot_fraction_a)
        c_flag = csd(run.n_cb, cfg.break_threshold_b)
        verdicts.append(
            Verdict(
                service=name,
                tcd=t_flag,
                csd=c_flag,
                td_detected=combine_verdict(t_flag, c_flag, run.completed),
                n_l=n_low[name],
                n_s=n_s,
            )
        )
    return verdicts


# ---------------------------------------------------------------------------
# Synthetic sessions (calibration corpus)
# ---------------------------------------------------------------------------

VIDEO_POOL = tuple(
    ServiceProfile(name=f"video-{i}", sni=f"video{i}.stream.example", qos_class="video")
    for i in range(1, 9)
)
AUDIO_POOL = tuple(
    ServiceProfile(name=f"audio-{i}", sni=f"audio{i}.stream.example", qos_class="audio")
    for i in range(1, 5)
)

_SAMPLE_DT = 0.25  # synthetic sampling cadence; divides both 1 s and 1.75 s slots


@dataclass(frozen=True)
class SynthKnobs:
    """Shape of the synthetic calibration corpus (all rates in Mbps).

    Every service in a session shares one base rate, mirroring the replay
    server's identical pacing of all services.  On top of that:

    * per-sample Gaussian noise,
    * in some discriminated sessions, a multi-second "congestion episode"
      on one non-target service, shallower than the default marking gap,
    * the injected discrimination itself, in four flavors: steady
      throttling, throttling with a delayed onset, deep on/off throttle
      pulses, and repeated connection breaks.
    """

    base_rate_lo: float = 4.0
    base_rate_hi: float = 6.5
    noise_sigma: float = 0.10
    # congestion episode on one non-target service of a discriminated
    # session: rebuffering-scale dip, below the default marking gap
    episode_prob: float = 0.35
    episode_depth_lo: float = 1.52
    episode_depth_hi: float = 1.62
    episode_frac_lo: float = 0.50
    episode_frac_hi: float = 0.62
    # discrimination flavor mix (remainder is steady throttling)
    p_delayed: float = 0.25
    p_pulsed: float = 0.30
    p_breaks: float = 0.15
    throttle_factor_lo: float = 0.08
    throttle_factor_hi: float = 0.40
    onset_frac_lo: float = 0.30
    onset_frac_hi: float = 0.52
    pulse_period_lo: float = 2.8
    pulse_period_hi: float = 3.6
    pulse_factor_lo: float = 0.05
    pulse_factor_hi: float = 0.15


def _samples_from_rates(
    rates: np.ndarray, download_bytes: int, max_duration_s: float
) -> tuple[tuple[ByteSample, ...], bool]:
    """Integrate a per-step rate curve into byte samples under the stop rule."""
    cum = 0.0
    out = [ByteSample(0.0, 0)]
    completed = False
    for i, r in enumerate(rates):
        t = (i + 1) * _SAMPLE_DT
        if t > max_duration_s:
            break
        step = max(float(r), 0.0) * 125_000.0 * _SAMPLE_DT
        if cum + step >= download_bytes and step > 0:
            # stop exactly at the target, interpolating the crossing time
            frac = (download_bytes - cum) / step
            t_hit = t - _SAMPLE_DT + frac * _SAMPLE_DT
            t_hit = max(t_hit, out[-1].t + 1e-6)
            out.append(ByteSample(t_hit, download_bytes))
            completed = True
            break
        cum += step
        out.append(ByteSample(t, int(cum)))
    return tuple(out), completed


def _pulse_mask(
    rng: np.random.Generator,
    n_steps: int,
    base: float,
    factor: float,
    knobs: SynthKnobs,
) -> np.ndarray:
    """Boolean per-step mask of deep on/off throttle pulses.

    Pulse width is sized so that any 1.75 s window keeps enough throttled
    coverage to depress its average by well over the default marking gap;
    the clear gaps between pulses stay sub-second (rapid on/off shaping).
    """
    period = rng.uniform(knobs.pulse_period_lo, knobs.pulse_period_hi)
    gap_mbps = base * (1.0 - factor)
    min_overlap = 1.75 * 1.75 / gap_mbps
    width = period - 1.75 + 1.25 * min_overlap
    phase = rng.uniform(0.0, period)
    t = np.arange(n_steps) * _SAMPLE_DT
    return ((t + phase) % period) < width


def generate_synthetic_session(
    rng: np.random.Generator,
    config: DetectionConfig,
    discriminate: bool,
    knobs: SynthKnobs = SynthKnobs(),
) -> tuple[SessionLog, str | None]:
    """One synthetic session plus its ground truth (discriminated service or None)."""
    if rng.random() < 0.5:
        pool = VIDEO_POOL
    else:
        pool = AUDIO_POOL
    count = int(rng.integers(2, len(pool) + 1))
    picks = rng.choice(len(pool), size=count, replace=False)
    services = [pool[int(i)] for i in picks]

    base = rng.uniform(knobs.base_rate_lo, knobs.base_rate_hi)
    n_steps = int(math.ceil(config.max_duration_s / _SAMPLE_DT))
    # horizon the detector will use: earliest completion, i.e. roughly the
    # finish time of an undiscriminated service at the base rate
    horizon_est = config.download_bytes / (base * 125_000.0)

    discriminated: str | None = None
    td_flavor = ""
    if discriminate:
        discriminated = services[int(rng.integers(0, len(services)))].name
        u = rng.random()
        if u < knobs.p_breaks:
            td_flavor = "breaks"
        elif u < knobs.p_breaks + knobs.p_delayed:
            td_flavor = "delayed"
        elif u < knobs.p_breaks + knobs.p_delayed + knobs.p_pulsed:
            td_flavor = "pulsed"
        else:
            td_flavor = "steady"

    # Congestion episode on one reference.  Only meaningful with at least
    # two undiscriminated services: with a single reference the episode
    # drags the per-slot maximum down and the session carries no usable
    # baseline.
    episode_svc: str | None = None
    if discriminated is not None and rng.random() < knobs.episode_prob:
        others = [s.name for s in services if s.name != discriminated]
        if len(others) >= 2:
            episode_svc = others[int(rng.integers(0, len(others)))]

    runs = []
    for svc in services:
        rates = base + rng.normal(0.0, knobs.noise_sigma, n_steps)
        n_cb = int(rng.integers(0, 3))
        if svc.name == episode_svc:
            depth = rng.uniform(knobs.episode_depth_lo, knobs.episode_depth_hi)
            frac = rng.uniform(knobs.episode_frac_lo, knobs.episode_frac_hi)
            dur = frac * horizon_est
            start = rng.uniform(0.0, max(horizon_est - dur, 0.0))
            i0 = int(start / _SAMPLE_DT)
            i1 = min(n_steps, int(math.ceil((start + dur) / _SAMPLE_DT)))
            rates[i0:i1] -= depth
        if svc.name == discriminated:
            if td_flavor == "breaks":
                # full speed while connected, but repeated resets keep the
                # download re-fetching and it never finishes
                stall_at = int(0.85 * horizon_est / _SAMPLE_DT)
                rates[stall_at:] = rng.uniform(0.0, 0.05, max(n_steps - stall_at, 0))
                n_cb = int(rng.integers(6, 13))
            elif td_flavor == "pulsed":
                factor = rng.uniform(knobs.pulse_factor_lo, knobs.pulse_factor_hi)
                mask = _pulse_mask(rng, n_steps, base, factor, knobs)
                rates = np.where(mask, rates * factor, rates)
            else:
                factor = rng.uniform(knobs.throttle_factor_lo, knobs.throttle_factor_hi)
                if td_flavor == "delayed":
                    onset_frac = rng.uniform(knobs.onset_frac_lo, knobs.onset_frac_hi)
                    onset = int(onset_frac * horizon_est / _SAMPLE_DT)
                else:
                    onset = 0
                rates[onset:] = rates[onset:] * factor
        samples, completed = _samples_from_rates(
            np.clip(rates, 0.0, None),
            min(config.download_bytes, svc.content_size),
            config.max_duration_s,
        )
        if svc.name == discriminated and td_flavor == "breaks":
            completed = False
        runs.append(
            ServiceRun(service=svc, samples=samples, n_cb=n_cb, completed=completed)
        )

    stamp = "19700101T000000Z"
    session = SessionLog(
        user_id=f"{stamp}-{int(rng.integers(0, 2**32)):08x}",
        isp=f"synth-isp-{int(rng.integers(1, 6))}",
        started_at="1970-01-01T00:00:00Z",
        runs=tuple(runs),
        config=config,
    )
    return session, discriminated


def generate_synthetic_corpus(
    n_logs: int,
    td_fraction: float,
    rng_seed: int,
    config: DetectionConfig | None = None,
    knobs: SynthKnobs = SynthKnobs(),
) -> list[tuple[SessionLog, str | None]]:
    """Deterministic corpus of synthetic sessions with ground truth.

    Each session carries 2..N same-class services drawn from a pool of 8
    video and 4 audio profiles; a td_fraction share of sessions has exactly
    one service discriminated.
    """
    if n_logs < 1:
        raise ValueError("n_logs must be >= 1")
    if not (0.0 <= td_fraction <= 1.0):
        raise ValueError("td_fraction must be in [0, 1]")
    cfg = config or DetectionConfig()
    rng = np.random.default_rng(rng_seed)
    corpus = []
    for _ in range(n_logs):
        discriminate = bool(rng.random() < td_fraction)
        corpus.append(generate_synthetic_session(rng, cfg, discriminate, knobs))
    return corpus


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    """Miss rate of one (delta, a, slot) combination over a labeled corpus."""

    delta_mbps: float
    slot_fraction_a: float
    slot_seconds: float
    n_t_scenarios: int
    n_ip: int
    n_cal: int

    def __post_init__(self) -> None:
        if not (0 <= self.n_cal <= self.n_ip <= self.n_t_scenarios):
            raise ValueError(
                f"need 0 <= n_cal <= n_ip <= n_t_scenarios, got "
                f"{self.n_cal}/{self.n_ip}/{self.n_t_scenarios}"
            )

    @property
    def error(self) -> float:
        return (self.n_ip - self.n_cal) / self.n_ip


DEFAULT_GRID: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]] = (
    (1.75, 1.5),  # delta, Mbps
    (0.2, 0.3),  # slot fraction a
    (1.0, 1.75),  # slot duration, seconds
)


def calibrate(
    corpus: list[tuple[SessionLog, str | None]],
    deltas: tuple[float, ...] = DEFAULT_GRID[0],
    fractions: tuple[float, ...] = DEFAULT_GRID[1],
    slot_times: tuple[float, ...] = DEFAULT_GRID[2],
) -> list[CalibrationResult]:
    """Grid-evaluate threshold combinations; best (lowest miss rate) first.

    A discriminated session counts as detected only when the verdict for
    its ground-truth service is "yes".  Ties break toward the larger delta,
    then larger a, then larger slot.
    """
    if not corpus:
        raise ValueError("empty corpus")
    n_ip = sum(1 for _, gt in corpus if gt is not None)
    if n_ip == 0:
        raise ValueError("corpus contains no discriminated sessions; error undefined")
    results = []
    for delta, a, slot in itertools.product(deltas, fractions, slot_times):
        cfg = DetectionConfig(
            delta_mbps=delta, slot_fraction_a=a, slot_seconds=slot
        )
        n_cal = 0
        for session, gt in corpus:
            if gt is None:
                continue
            verdicts = {v.service: v for v in detect_session(session, cfg)}
            if verdicts[gt].td_detected == TD_YES:
                n_cal += 1
        results.append(
            CalibrationResult(
                delta_mbps=delta,
                slot_fraction_a=a,
                slot_seconds=slot,
                n_t_scenarios=len(corpus),
                n_ip=n_ip,
                n_cal=n_cal,
            )
        )
    results.sort(
        key=lambda r: (r.error, -r.delta_mbps, -r.slot_fraction_a, -r.slot_seconds)
    )
    return results

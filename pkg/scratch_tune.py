"""Scratch: probe calibration-grid ordering on the synthetic corpus."""
import time
import collections
from tdprobe.detect import (
    generate_synthetic_corpus,
    calibrate,
    detect_session,
    SynthKnobs,
)
from tdprobe.model import TD_YES

for seed in (1, 7, 42):
    t0 = time.time()
    corpus = generate_synthetic_corpus(230, 0.5, seed)
    t1 = time.time()
    results = calibrate(corpus)
    t2 = time.time()
    print(f"seed={seed} gen={t1-t0:.1f}s grid={t2-t1:.1f}s n_ip={results[0].n_ip}")
    for r in results:
        tag = " <== best-row" if (r.delta_mbps, r.slot_fraction_a, r.slot_seconds) == (1.75, 0.3, 1.75) else ""
        print(f"  d={r.delta_mbps:<5} a={r.slot_fraction_a:<4} s={r.slot_seconds:<5} err={100*r.error:6.2f}%{tag}")
    # false positives on clean logs at default config
    fp = 0
    for session, gt in corpus:
        if gt is None:
            if any(v.td_detected == TD_YES for v in detect_session(session)):
                fp += 1
    print(f"  false-positive clean logs at default cfg: {fp}")

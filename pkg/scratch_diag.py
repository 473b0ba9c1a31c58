"""Scratch: diagnose best-row misses."""
import numpy as np
from tdprobe.detect import (
    generate_synthetic_corpus, detect_session, session_horizon,
    compute_slot_series, mark_low_slots, soft_range_contains,
)
from tdprobe.model import DetectionConfig, TD_YES

cfg_best = DetectionConfig(delta_mbps=1.75, slot_fraction_a=0.3, slot_seconds=1.75)

for seed in (1, 7, 42, 99, 123):
    corpus = generate_synthetic_corpus(230, 0.5, seed)
    for idx, (session, gt) in enumerate(corpus):
        if gt is None:
            continue
        verdicts = {v.service: v for v in detect_session(session, cfg_best)}
        v = verdicts[gt]
        if v.td_detected != TD_YES:
            h = session_horizon(session)
            n_t = None
            info = []
            if h:
                series = [compute_slot_series(r, 1.75, h) for r in session.runs]
                marks = mark_low_slots(series, 1.75)
                n_t = series[0].n_t
                for name, (_, nl) in marks.items():
                    soft = soft_range_contains(n_t, nl, 0.3)
                    info.append(f"{name}:nl={nl}{'*' if soft else ''}")
            run = session.run_for(gt)
            print(f"seed={seed} log={idx} gt={gt} tcd={v.tcd} csd={v.csd} "
                  f"ncb={run.n_cb} comp={run.completed} H={h and round(h,1)} N_T={n_t} "
                  f"n_l={v.n_l} n_s={v.n_s} | {' '.join(info)}")

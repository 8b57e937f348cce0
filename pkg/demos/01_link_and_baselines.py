"""
Link simulation and the classical baselines
===========================================

A short 4 x 80 km link at 32 Gbaud 64-QAM, received at 2 samples per
symbol. CD-only compensation is compared with 1-step-per-span DBP over a
few launch powers.
"""
import numpy as np

from paldbp import dataset
from paldbp.channel import LinkParams
from paldbp.experiments import evaluate_cdc, evaluate_dbp

link = LinkParams(n_spans=4, steps_per_span=20)
powers = [-2.0, 2.0, 6.0]

# %% simulate 8 test frames per launch power
test = dataset.simulate(link, powers, 8, seed=0, split="test")
print("rx shape (power, frame, sample):", test.rx.shape)

# %% CD-only versus DBP
print(f"{'P [dBm]':>8} {'CDC Q2':>8} {'DBP Q2':>8}")
for p in powers:
    cdc = evaluate_cdc(link, test, p)
    dbp = evaluate_dbp(link, test, p, steps_per_span=1)
    print(f"{p:8.1f} {cdc.q2_text():>8} {dbp.q2_text():>8}")

# %% nonlinear penalty grows with power: CDC effective SNR per power
snr = [evaluate_cdc(link, test, p).eff_snr_db for p in powers]
print("CDC effective SNR [dB]:", np.round(snr, 2))

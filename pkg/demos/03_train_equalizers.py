"""
Training LDBP and PA-LDBP
=========================

Both equalizers start from the analytic design (least-squares filters, and
for PA-LDBP the perturbation c0 vectors) and are refined with Adam on a
reduced 4-span link. LDBP first picks its nonlinear scaling on validation.
"""
import numpy as np

from paldbp import dataset
from paldbp.channel import LinkParams
from paldbp.experiments import evaluate_cdc, evaluate_model, fit_scheme
from paldbp.training import TrainConfig

link = LinkParams(n_spans=4, steps_per_span=20)
p = 4.0
train = dataset.simulate(link, [p], 32, seed=0, split="train")
test = dataset.simulate(link, [p], 16, seed=0, split="test")
cfg = TrainConfig(epochs=20)

# %% CD-only reference
print(f"CDC     Q2 {evaluate_cdc(link, test, p).q2_text()} dB")

# %% one step per span
for mode in ("ldbp", "pa"):
    model, rec, eta = fit_scheme(mode, link, 1, train, p, cfg)
    rep = evaluate_model(model, test, p)
    extra = f" (eta {eta})" if eta is not None else ""
    print(f"{mode:6s}  Q2 {rep.q2_text()} dB{extra}; validation SNR {np.round(rec.val_snr_db[::5], 2)}")

# %% the learning curve is plain CSV
print(rec.to_csv().splitlines()[:3])

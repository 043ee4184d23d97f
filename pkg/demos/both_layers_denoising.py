"""Training both layers turns surplus units into an averaging ensemble.

When the second layer learns too, an over-parameterised student does NOT
pay for its surplus units. K students facing a single teacher unit with
second-layer weight v* settle into a "denoising" arrangement: each student
aligns with the teacher and the second-layer weights split v* evenly, so
the noise-driven fluctuations of the K units average out and

    eps_g* = eta (sigma v*)^2 / (2 sqrt(3) K pi)   (erf, M = 1),

i.e. MORE units make the plateau LOWER, in contrast to the frozen-second-
layer committee (see demos/overparameterisation_scaling.py).

Run time: a few minutes.
"""

import numpy as np

from committee_flow import (Activation, DenoisingState, GaussianStream,
                            TrainConfig, eg_both_erf_m1, embed_denoising,
                            networks_from_macro, run)

ETA, SIGMA, V_STAR, N = 0.01, 0.01, 2.0, 300

print(f"both layers trained: M=1, v*={V_STAR}, eta={ETA}, sigma={SIGMA}")
print(f"{'K':>3} {'simulated':>12} {'1/K law':>12} {'ratio':>7}")
for K in (1, 2, 4):
    # start at the denoising fixed point: all K units on the teacher,
    # second-layer weights sharing v* equally
    state = DenoisingState(Q=1, C=0, R=1, S=0, v=V_STAR / K, Z=K)
    student, teacher = networks_from_macro(
        embed_denoising(state, 1, K, V_STAR), N)
    cfg = TrainConfig(N=N, M=1, K=K, activation=Activation.ERF, eta_w=ETA,
                      eta_v=ETA, sigma=SIGMA, mode="both", steps=1500 * N,
                      seed=9, init=student)
    recs = run(cfg, teacher, GaussianStream(), record_stride=N,
               keep_macro=False)
    a = np.array([r.alpha for r in recs])
    e = np.array([r.eg for r in recs])
    sim = e[a >= 750].mean()
    law = eg_both_erf_m1(ETA, SIGMA, K, V_STAR)
    print(f"{K:3d} {sim:12.4e} {law:12.4e} {sim / law:7.3f}")

print("\nThe plateau drops like 1/K: an ensemble of students denoises "
      "the labels that a single student cannot.")

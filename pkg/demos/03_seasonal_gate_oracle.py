"""How far should the weak seasonal branch be trusted?

With a perfect strong-branch forecast, the remaining error is the weak
component. Adding alpha times a noisy estimate of it helps most at
alpha* = Var[s2] / (Var[s2] + noise). The sweep below finds the empirical
minimiser and compares it with that value.

Run with ``python3 demos/03_seasonal_gate_oracle.py``.
"""
from mdmlp_eia.ablation import SyntheticSignalSpec, alpha_star_oracle

# %%
# The last row has no weak component, so the gate should stay shut.
print(" var_s2  noise  alpha_hat  alpha*   gain   theory")
for var_s2, noise in [(1.0, 1.0), (1.0, 0.25), (1.0, 4.0), (2.0, 0.5), (0.0, 1.0)]:
    r = alpha_star_oracle(SyntheticSignalSpec(tlen=100_000, var_s2=var_s2, noise_var=noise))
    print(f"{var_s2:7.2f} {noise:6.2f} {r.alpha_hat:10.2f} {r.alpha_star:7.2f} {r.reduction:6.3f} {r.reduction_theory:8.3f}")

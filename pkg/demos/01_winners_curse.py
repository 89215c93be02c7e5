"""Why selected instruments need correcting, one SNP at a time.

We draw many noisy estimates of a single weak SNP effect, keep only those
that pass a significance screen, and compare three summaries of the
survivors: the raw estimate (inflated by the winner's curse), the same
screen with added pseudo-noise, and the Rao-Blackwell estimate that
conditions the pseudo-noise out again.

Run:  python demos/01_winners_curse.py
"""

import numpy as np

from mrregger.selection import SelectionConfig, _rb_arrays, pvalue_to_lambda

gamma, sigma_x, eta = 0.03, 0.01, 0.5
lam = pvalue_to_lambda(5e-8)
rng = np.random.default_rng(1)
n = 1_000_000

g_hat = gamma + sigma_x * rng.standard_normal(n)
z = eta * rng.standard_normal(n)

fixed = np.abs(g_hat / sigma_x) > lam
rerand = np.abs(g_hat / sigma_x + z) > lam
g_rb, v_rb, _, _ = _rb_arrays(g_hat[rerand], np.full(rerand.sum(), sigma_x), lam, eta)

print(f"true gamma               {gamma:.4f}   (z-score {gamma / sigma_x:.1f}, threshold {lam:.3f})")
print(f"fixed screen, raw        {g_hat[fixed].mean():.4f}   from {fixed.sum():>6} survivors")
print(f"rerandomized, raw        {g_hat[rerand].mean():.4f}   from {rerand.sum():>6} survivors")
print(f"rerandomized, RB         {g_rb.mean():.4f}")
print(f"Var(gamma_RB) / mean RB variance estimate = {g_rb.var(ddof=1) / v_rb.mean():.3f}")

# the correction fades as the SNP becomes strong relative to the threshold
print("\nz-score  raw mean / gamma  RB mean / gamma")
for zscore in (4.0, 6.0, 8.0, 12.0):
    gam = zscore * sigma_x
    gh = gam + sigma_x * rng.standard_normal(n)
    keep = np.abs(gh / sigma_x + eta * rng.standard_normal(n)) > lam
    rb, _, _, _ = _rb_arrays(gh[keep], np.full(keep.sum(), sigma_x), lam, eta)
    print(f"{zscore:7.1f}  {gh[keep].mean() / gam:16.3f}  {rb.mean() / gam:15.3f}")

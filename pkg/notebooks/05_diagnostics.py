# coding: utf-8
"""Diagnostics
=============

Checks on the large-sample behaviour behind the intervals: normality of the
standardized estimates, smoothness of the control surface relative to the
matching radius, and the noise variance against its oracle value.
"""

# %%
from matchvar.inference import MethodConfig
from matchvar.matching import match_mnn
from matchvar.simulation.coverage import SimulationSpec, assumption_diagnostics, clt_diagnostic, oracle_ve
from matchvar.simulation.dgp import CheParams, gen_che, gen_kang_schafer
from matchvar.variance import pooled_variance, ve_hat
from matchvar.matching import aggregate_weights

# %% [markdown]
# ## Standardized estimates against N(0, 1)

# %%
spec = SimulationSpec("CheEtAl", {"overlap": "medium"}, n_reps=100, base_seed=4000,
                      methods=(MethodConfig(matcher="scm", c=3.0, min_controls=1),))
res = clt_diagnostic(spec)
print(f"KS statistic {res.statistic:.3f}, p-value {res.pvalue:.3f}")

# %% [markdown]
# ## Surface smoothness relative to cluster radius

# %%
for name, (d, truth) in [("Che", gen_che(1)), ("Kang-Schafer", gen_kang_schafer(500, 1))]:
    diag = assumption_diagnostics(d, match_mnn(d, 8), truth)
    print(f"{name:13s} derivative control: max {diag.derivative_control:.3f}  mean {diag.derivative_control_mean:.3f}")

# %% [markdown]
# ## Noise variance against the oracle

# %%
d, truth = gen_che(5, "medium", CheParams(n_treated=400, n_control=2000))
m = match_mnn(d, 8)
est = ve_hat(pooled_variance(m, d), m.n_matched, aggregate_weights(m).ess)
print(f"estimated V_E {est:.6f}  oracle V_E {oracle_ve(m, truth.noise_sd):.6f}")

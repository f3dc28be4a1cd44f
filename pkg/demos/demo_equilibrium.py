"""Equilibrium interest rates implied by a representative agent.

Given a utility function and an endowment process, the equilibrium
calculation returns the short rate, the market price of risk, and a
portfolio builder.  Classical special cases are reproduced exactly and a
custom utility is supplied as expression strings.
"""

import numpy as np

from gkernel import (
    CustomUtility,
    EquilibriumSpec,
    LogUtility,
    PowerUtility,
    equilibrium_model,
)

spec = EquilibriumSpec.build(
    utility=LogUtility(),
    endowment_drift="0.04 * x1",
    endowment_vol="0.3 * x1",
    beta=0.03,
)
pt = equilibrium_model(spec, 1.0)
print("log investor, wealth 1.0:")
print(f"  short rate   {pt.rate:+.4f}")
print(f"  risk load    {pt.risk_load[0]:.4f}")
print(f"  hedge for a 2x inverse covariance  {pt.portfolio(2.0 * np.eye(1))[0]:.4f}")

print("\nrisk aversion sweep (power utility, same endowment):")
for gamma in (0.5, 1.0, 2.0, 4.0):
    spec = EquilibriumSpec.build(
        utility=PowerUtility(gamma),
        endowment_drift="0.04 * x1",
        endowment_vol="0.3 * x1",
        beta=0.03,
    )
    pt = equilibrium_model(spec, 1.0)
    print(f"  gamma={gamma:3.1f}  rate {pt.rate:+.4f}  "
          f"risk load {pt.risk_load[0]:.4f}")

# quadratic-type preferences supplied directly as derivative expressions
custom = CustomUtility("2.0 - 0.5 * x1", "-0.5", "0.0")
spec = EquilibriumSpec.build(
    utility=custom,
    endowment_drift="0.04 * x1",
    endowment_vol="0.3 * x1",
    beta=0.03,
)
pt = equilibrium_model(spec, 1.0)
print(f"\ncustom marginal utility at wealth 1.0: rate {pt.rate:+.4f}, "
      f"risk load {pt.risk_load[0]:.4f}")

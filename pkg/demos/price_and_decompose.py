# Pricing a Type-II forward-start call two ways.
#
# A forward-start call pays (e^{X_T} - e^{alpha} e^{X_s})_+ at maturity T,
# with the strike fixed at the forward-start date s as a multiple e^{alpha}
# of the spot there.  This demo prices one under an extended Stein-Stein
# stochastic volatility model:
#
#   1. directly, as the discounted Monte Carlo payoff average, and
#   2. through the pathwise decomposition into a randomized Black-Scholes
#      term plus two correlation corrections,
#
# and shows that the two agree within Monte Carlo error -- the
# decomposition is an exact identity, not an approximation.

import fwdsmile as fs
from fwdsmile import mc_engine as mc
from fwdsmile.forward_smile import ContractSpec, atm_alpha

# The desk-scale model: vol = f(Y) with Y an OU factor, negatively
# correlated with the spot (rho = -0.5), and f a smoothed, clamped |y|.
model = fs.ModelSpec(
    rate=0.01, rho=-0.5, x0=0.0,
    vol=fs.ExtendedSteinStein(
        fs.OuParams(kappa=1.0, m=0.2, lam=0.25, y0=0.25),
        fs.SmoothedAbs(eps=1e-3, sig_min=0.01, sig_max=2.0),
    ),
)

t, s = 0.0, 0.5

print("gap      direct           decomposition      z     bs_term  h_term    g_term")
for gap in (0.2, 0.1, 0.05, 0.025):
    maturity = s + gap
    contract = ContractSpec(t=t, s=s, maturity=maturity,
                            alpha=atm_alpha(s, maturity, model.rate))
    grid = mc.SimGrid.build(t, s, maturity, steps_per_year=400)
    batch = mc.simulate(model, grid, n_paths=100_000, seed=42)

    direct = mc.price_forward_start(batch, contract)
    decomp = mc.price_decomposition(batch, contract)

    print(f"{gap:5.3f}  {direct.value:.6f}+-{direct.std_error:.6f}  "
          f"{decomp.total.value:.6f}+-{decomp.total.std_error:.6f}  "
          f"{direct.z_against(decomp.total):5.2f}  "
          f"{decomp.bs_term.value:.6f}  {decomp.h_term.value:+.2e}  "
          f"{decomp.g_term.value:+.2e}")

# Note how the [t,s] correction (g_term) shrinks more slowly than the
# [s,T] correction (h_term) as the gap closes: the short-maturity smile
# asymmetry is inherited from the vol-spot correlation accumulated
# *before* the strike is fixed.

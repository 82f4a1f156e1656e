# Anatomy of the short-maturity limit formulas.
#
# The gap -> 0 limits of the ATM forward smile are expectations over the
# window [t, s] only:
#
#   level:  E(sigma_s) + rho * E_corr
#   skew:   rho e^{-r(s-t)} / (4 e^{x_t}) * E( e^{X_s} sbar_s^2 / sigma_s^2 )
#   gap-scaled curvature: a four-term expression whose first term is a
#       nested conditional-expectation integral over u in [t, s].
#
# This demo evaluates each piece and prints the curvature breakdown,
# including the diagnostic column where the correction scalar is pulled
# out of the expectation (they differ sharply here: the clamp floor makes
# E(1/sigma_s^2) huge, so where 1/sigma_s sits relative to the
# expectation matters).

from fwdsmile import asymptotics
import fwdsmile as fs
from fwdsmile.mc_engine import McConfig

model = fs.ModelSpec(
    rate=0.01, rho=-0.5, x0=0.0,
    vol=fs.ExtendedSteinStein(
        fs.OuParams(kappa=1.0, m=0.2, lam=0.25, y0=0.25),
        fs.SmoothedAbs(),
    ),
)
cfg = McConfig(n_paths=200_000, steps_per_year=400, seed=7, exact_ou=True)
t, s = 0.0, 0.5

# the correction term, two algebraically identical ways
spec = asymptotics.correction_e(model, t, s, cfg, mode="specialized")
gen = asymptotics.correction_e(model, t, s, cfg, mode="general")
print("E_corr (factorized form)   "
      f"{spec.estimate.value:.6f} +- {spec.estimate.std_error:.6f}")
print("E_corr (1/sigma_s form)    "
      f"{gen.estimate.value:.6f} +- {gen.estimate.std_error:.6f}")

level = asymptotics.level_limit(model, t, s, cfg)
skew = asymptotics.skew_limit(model, t, s, cfg)
print(f"\nlevel limit   {level.value:.5f} +- {level.std_error:.5f}")
print(f"skew limit    {skew.value:+.4f} +- {skew.std_error:.4f}")

curv = asymptotics.curvature_limit(model, t, s, cfg)
print("\ngap-scaled curvature limit "
      f"{curv.total.value:.4f} +- {curv.total.std_error:.4f}")
print("  nested integral        "
      f"{curv.term_nested.value:+.4f} +- {curv.term_nested.std_error:.4f}")
print(f"  1/E(sigma_s)           {curv.term_level_uncorr:+.4f}")
print(f"  -1/(level limit)       {-curv.term_level_corr:+.4f}")
print("  weighted correction    "
      f"{curv.term_correction.value:+.4f} +- {curv.term_correction.std_error:.4f}")
print(f"  [diagnostic, factored] {curv.term_correction_alt:+.4f}")

# With rho < 0 and f increasing on the realized range: the correction is
# positive, so the level limit sits *below* E(sigma_s), and the skew is
# negative -- the familiar equity-style forward smile.

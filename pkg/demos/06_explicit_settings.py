"""Three-setting inequalities versus their two-setting CHSH subsets, for explicit qubit settings."""

from bellforge import experiments as ex
from bellforge.keyrate import asymptotic_model, rate_curve
from bellforge.polytope import InfeasibleClassical

grid = ex.log_grid(8, 12, 1)
for name in ("explicit3", "explicit2", "explicit2-ext"):
    setup = ex.preset_setup(name)
    try:
        model = asymptotic_model(setup)
    except InfeasibleClassical:
        print(f"{name}: behavior is local, no key")
        continue
    f = model.functional
    print(f"{name}: violation {model.beta - f.c:.4f} (beta {model.beta:.4f}, c {f.c:.4f})")
    print("   full inequality :", [round(float(pt.rate), 4) for pt in rate_curve(model, grid)])
    if setup.alice.n_settings > 2:
        print("   best CHSH subset:", [round(float(r), 4) for r in ex.subset_rate_curve(setup, grid)])
        for s in ex.best_chsh_subsets(setup):
            print(f"      Alice {s.settings_alice} Bob {s.settings_bob}: S = {s.model.beta:.4f}")

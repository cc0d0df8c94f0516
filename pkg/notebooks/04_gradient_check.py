"""Compare every analytic backward pass with central finite differences.

Checks run in float64. The error is normwise relative:
||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
Across ReLU and max-pool kinks, finite differences are meaningless, so
coordinates whose estimate changes with the step size are skipped.
"""
from exprnet import gradcheck

results = gradcheck.run_suite(trials=5, seed=0)
for name, err in results.items():
    tol = gradcheck.MODEL_TOL if name == "full_model" else gradcheck.LAYER_TOL
    print(f"{name:14s} {err:.2e}  (tolerance {tol:.0e})")
print("all passed" if gradcheck.passed(results) else "FAILED")

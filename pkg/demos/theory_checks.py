"""Run the statistical verification suite and print its report table.

Same driver as `olala checks`; the negative controls (an overloaded error-law
run and the 16-codeword tie-shell comparison) are supposed to fail and are
excluded from the verdict.

Run:  python3 demos/theory_checks.py
"""

from olala.checks import all_non_control_passed, run_all_checks
from olala.config import ExperimentConfig

reports = run_all_checks(ExperimentConfig())
width = max(len(r.name) for r in reports)
for r in reports:
    tag = "control" if r.negative_control else "       "
    print(f"{'pass' if r.passed else 'FAIL'} {tag} {r.name:<{width}}  "
          + "; ".join(f"{iq['name']}={iq['lhs']:.4g}" for iq in r.inequalities[:2]))
print("\nsuite verdict (controls excluded):",
      "all passed" if all_non_control_passed(reports) else "FAILURES")

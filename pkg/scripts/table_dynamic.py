"""Dynamic logit Monte Carlo table (no jackknife columns for this design).

    python scripts/table_dynamic.py --n 100 --t 40 --reps 200
"""

import sys

from table_static import run

if __name__ == "__main__":
    sys.exit(run("logit_dynamic", {"n": 100, "t": 40, "estimators": ("POOL", "NNR", "FE", "FE_A", "FER", "FER_A")}))

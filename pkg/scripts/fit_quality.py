import os
import numpy as np
import pandas as pd
from tqdm import tqdm

from rephase import atlas, config, timeopt

# Configuration
OUTPUT_CSV = "data/fit_quality.csv"
MAX_REL_ERROR = 0.012


def main():
    """Compare the closed-form fits against the exact time-optimal curve over the swept range."""
    dLs = atlas.axis(config.TIME_SWEEP_MIN, config.TIME_SWEEP_MAX, 0.05)
    rows = []
    l1 = None
    for dL in tqdm(dLs):
        l1 = timeopt.solve_lambda1(float(dL), x0=l1)
        chi = timeopt.f2(float(dL), l1)
        approx = timeopt.approx_deltaL(chi)
        rows.append({
            "dL": dL,
            "chi": chi,
            "l1": l1,
            "approx_l1": timeopt.approx_lambda1(float(dL)),
            "approx_delta_L": approx,
            "rel_error_delta_L": abs(approx - dL) / dL,
            "approx_chi_max": timeopt.chi_max(float(dL)),
        })

    df = pd.DataFrame(rows)
    worst = df.loc[df["rel_error_delta_L"].idxmax()]
    print(f"approx_deltaL: max relative error {worst['rel_error_delta_L']:.4f} at dL={worst['dL']:.4f}")
    print(f"approx_lambda1: max abs error {np.max(np.abs(df['approx_l1'] - df['l1'])):.4f}")
    if worst["rel_error_delta_L"] > MAX_REL_ERROR:
        print(f"WARNING: fit error exceeds {MAX_REL_ERROR}")

    print(f"Saving to {OUTPUT_CSV}...")
    os.makedirs(os.path.dirname(OUTPUT_CSV), exist_ok=True)
    df.to_csv(OUTPUT_CSV, index=False, float_format="%.17g")
    print("Done.")


if __name__ == "__main__":
    main()

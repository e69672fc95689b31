import os
import math
import time
import numpy as np
import pandas as pd
from tqdm import tqdm
from concurrent.futures import ThreadPoolExecutor, as_completed

from rephase import config, timeopt
from rephase.errors import RephaseError

# Configuration
N_CASES = 1000
CHI_MIN = 1e-5
CHI_MAX = 1.2e4
OUTPUT_CSV = "data/convergence_study.csv"


def run_case(chi):
    """Solve one chi with both strategies; returns a row for the results table."""
    row = {"chi": chi, "approx_delta_L": timeopt.approx_deltaL(chi)}
    problem = timeopt.TimeOptProblem.from_chi(chi)
    for strategy in timeopt.STRATEGIES:
        key = strategy.replace("-", "_")
        started = time.perf_counter()
        try:
            sol = timeopt.solve_time_optimal(problem, strategy=strategy)
            row[f"{key}_delta_L"] = sol.delta_L
            row[f"{key}_iterations"] = sol.iterations
            row[f"{key}_attempts"] = sol.attempts
            row[f"{key}_converged"] = True
        except RephaseError as e:
            print(f"chi={chi:.6g} {strategy} failed: {e}")
            row[f"{key}_delta_L"] = math.nan
            row[f"{key}_iterations"] = -1
            row[f"{key}_attempts"] = timeopt.MAX_ATTEMPTS
            row[f"{key}_converged"] = False
        row[f"{key}_seconds"] = time.perf_counter() - started
    return row


def main():
    rng = np.random.default_rng(config.SEED)
    chis = np.exp(rng.uniform(math.log(CHI_MIN), math.log(CHI_MAX), N_CASES))
    print(f"Solving {N_CASES} random chi in [{CHI_MIN:g}, {CHI_MAX:g}] (seed {config.SEED})...")

    rows = []
    with ThreadPoolExecutor(max_workers=config.JOBS) as executor:
        futures = [executor.submit(run_case, float(chi)) for chi in chis]
        for future in tqdm(as_completed(futures), total=len(futures)):
            rows.append(future.result())

    df = pd.DataFrame(rows).sort_values("chi")
    for strategy in timeopt.STRATEGIES:
        key = strategy.replace("-", "_")
        ok = df[df[f"{key}_converged"]]
        print(
            f"{strategy}: {len(ok)}/{len(df)} converged, "
            f"iterations max {ok[f'{key}_iterations'].max()} mean {ok[f'{key}_iterations'].mean():.2f}"
        )

    print(f"Saving to {OUTPUT_CSV}...")
    os.makedirs(os.path.dirname(OUTPUT_CSV), exist_ok=True)
    df.to_csv(OUTPUT_CSV, index=False, float_format="%.17g")
    print("Done.")


if __name__ == "__main__":
    main()

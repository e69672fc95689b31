import os
import json

from rephase import atlas, config

# Configuration
OUTPUT_CSV = os.getenv("REPHASE_ATLAS_PATH", "data/fuel_atlas_desk.csv")
EPSILON = float(os.getenv("REPHASE_ATLAS_EPS", 0.1))


def main():
    dL_axis = atlas.axis(*config.DESK_DL_AXIS)
    eta_axis = atlas.axis(*config.DESK_ETA_AXIS)
    print(f"Generating {len(dL_axis)} x {len(eta_axis)} fuel atlas at eps={EPSILON} with {config.JOBS} workers...")

    grid = atlas.generate_fuel_atlas(dL_axis, eta_axis, EPSILON, jobs=config.JOBS, progress=True)
    summary = grid.meta["summary"]
    print(json.dumps(summary, indent=2))

    if summary["convergence_rate"] < 0.99:
        print("WARNING: fewer than 99% of the cells converged")
    if summary["monotone_column_rate"] < 0.99:
        print("WARNING: J_norm is not monotone in eta for more than 1% of the columns")

    mutations = atlas.mutation_cells(grid)
    print(f"{len(mutations)} adjacent cell pairs show a costate mutation")

    print(f"Saving to {OUTPUT_CSV}...")
    atlas.write_atlas(grid, OUTPUT_CSV)
    print("Done.")


if __name__ == "__main__":
    main()

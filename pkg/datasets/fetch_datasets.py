"""Check for the benchmark CSV exports and print fetch instructions.

This is a stub by design: the benchmark archives sit behind academic pages
whose terms differ, so nothing is downloaded automatically. The script
reports which files are present and where to get the missing ones.
"""

from pathlib import Path

HERE = Path(__file__).parent

SOURCES = {
    "actuator.csv": "hydraulic actuator set (Sjoberg et al.); nonlinear benchmark collections",
    "ballbeam.csv": "DaISy 96-004: ball and beam",
    "drives.csv": "flexible transmission drive set; nonlinear benchmark collections",
    "dryer.csv": "DaISy 96-006: laboratory hair dryer",
    "furnace.csv": "DaISy 96-xxx: industrial furnace / gas furnace record",
    "flutter.csv": "DaISy 96-008: wing flutter",
    "tank.csv": "cascaded tanks set; nonlinear benchmark collections",
}


def main() -> int:
    missing = []
    for name, source in SOURCES.items():
        path = HERE / name
        status = "present" if path.exists() else "MISSING"
        print(f"{name:18} {status:8} {source}")
        if not path.exists():
            missing.append(name)
    if missing:
        print(f"\n{len(missing)} file(s) missing. Export each record to CSV with "
              "columns u0..,y0.. (header row, comma separator) and place it in "
              f"{HERE}/. See datasets/README.md for the expected contents.")
        return 1
    print("\nall benchmark files present")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

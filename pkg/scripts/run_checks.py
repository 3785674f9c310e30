"""Run the numerical acceptance checks and write a JSON report.

    python scripts/run_checks.py --level fast --threads 1 --out report.json
"""
import argparse
import json

from annulus_sle.verify import verify_all


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--level", choices=["fast", "full"], default="fast")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--only", type=int, nargs="*")
    ap.add_argument("--out")
    a = ap.parse_args()
    results = verify_all(a.level, a.threads, a.seed, only=a.only, echo=print)
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} passed")
    if a.out:
        with open(a.out, "w") as fh:
            json.dump([r.to_dict() for r in results], fh, indent=2, default=float)


if __name__ == "__main__":
    main()

"""Finite-difference check of every layer and the toy network in float64.

Run: python3 demos/gradient_check.py
"""

from s2ica.gradcheck import run_suite


def main():
    for seed in range(3):
        results = run_suite(seed)
        print(f"seed {seed}")
        for name, err in results.items():
            print(f"  {name:14s} max relative error {err:.2e}")
        print(f"  worst {max(results.values()):.2e} (threshold 1e-5)")


if __name__ == "__main__":
    main()

"""Command-line wrapper around HiGHS so it can be driven like any other
file-based solver: read a model, solve, write a HiGHS solution file and
print the dual bound."""

from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="highs_runner")
    parser.add_argument("model_file")
    parser.add_argument("solution_file")
    parser.add_argument("--time-limit", type=float, default=600.0)
    parser.add_argument("--mip-gap", type=float, default=0.0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    # read before setting the time limit: reading counts against it
    if h.readModel(args.model_file) != highspy.HighsStatus.kOk:
        print(f"cannot read {args.model_file}", file=sys.stderr)
        return 2
    h.setOptionValue("time_limit", args.time_limit)
    h.setOptionValue("mip_rel_gap", args.mip_gap)
    h.setOptionValue("mip_abs_gap", 0.0)
    h.setOptionValue("threads", args.threads)
    h.run()
    status = h.modelStatusToString(h.getModelStatus())
    info = h.getInfo()
    h.writeSolution(args.solution_file, 0)
    print(f"model_status {status}")
    print(f"objective {info.objective_function_value!r}")
    print(f"dual_bound {info.mip_dual_bound!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run the Kalman baseline and the data-driven controller on the same scripted users.

Without checkpoints the data-driven controller uses a hard-wired timing model
(always "handover") and an untrained SVAE, which is only useful as a smoke run.
Pass checkpoints from ``handover train`` for a real comparison:

    python3 demos/compare_controllers.py --svae runs/checkpoints/svae.zip \
        --timing runs/checkpoints/timing.zip
"""

import argparse

import torch

from srl_handover import controller as ctl
from srl_handover import svae, timing
from srl_handover.dataio import ACTIVITIES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--svae", help="SVAE checkpoint")
    ap.add_argument("--timing", help="timing checkpoint")
    ap.add_argument("--seeds", type=int, default=3, help="scripted users per activity")
    ap.add_argument("--ticks", type=int, default=250)
    ap.add_argument("--activities", nargs="*", default=["Hammer a nail", "Mount a mic", "Clean a window"],
                    choices=ACTIVITIES)
    args = ap.parse_args()
    torch.set_num_threads(1)

    model = svae.load_svae(args.svae)[0] if args.svae else svae.SvaeModel(svae.SvaeConfig(), 153).eval()
    tm = timing.load_timing(args.timing)[0] if args.timing else ctl.constant_timing(True)

    print(f"{'activity':<22}{'seed':>5}  {'controller':<9}{'done':>6}{'time s':>8}{'path m':>8}{'jerk':>10}")
    for activity in args.activities:
        for seed in range(args.seeds):
            for name, make in (("baseline", ctl.BaselineController), ("3hands", lambda: ctl.HandsController(tm, model))):
                log = ctl.run_episode(make(), ctl.scripted_user(activity, seed=100 + seed), args.ticks)
                t = "-" if log.completion_tick is None else f"{log.completion_tick / 25:.2f}"
                print(f"{activity:<22}{seed:>5}  {name:<9}{str(log.completed):>6}{t:>8}"
                      f"{log.path_length:>8.3f}{log.mean_jerk:>10.2f}")


if __name__ == "__main__":
    main()

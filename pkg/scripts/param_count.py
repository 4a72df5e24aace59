"""Parameter counts and stage shapes of the model presets."""

from lvcadenet.cadenet import PRESETS, CadeNet

TARGETS = {"reference": 5.87e6, "large": 11.79e6}


def main():
    for name, cfg in PRESETS.items():
        n = CadeNet(cfg).n_parameters()
        line = f"{name:9s} {n:>11,d}"
        if name in TARGETS:
            line += f"  ({100 * (n - TARGETS[name]) / TARGETS[name]:+.1f}% of {TARGETS[name] / 1e6:.2f} M)"
        print(line)
        print("          stages (C, L, D):", cfg.stage_shapes())


if __name__ == "__main__":
    main()

"""Parameter counts of the 125M-shape stacks (d=768, 24 blocks) for several layouts."""
from xlstm_np.blocks import StackConfig, count_params

LAYOUTS = {
    "xLSTM[1:0]": dict(ratio=(1, 0)),
    "xLSTM[7:1]": dict(ratio=(7, 1)),
    "xLSTM[0:1]": dict(ratio=(0, 1)),
}

if __name__ == "__main__":
    for vocab in (50257, 50304):
        for name, kw in LAYOUTS.items():
            cfg = StackConfig(vocab_size=vocab, embedding_dim=768, num_blocks=24, **kw)
            print(f"V={vocab:<6} {name:<11} {count_params(cfg) / 1e6:8.2f}M  layout {''.join(cfg.layout())}")

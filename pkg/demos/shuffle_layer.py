"""Walk through the shuffle (SU) layer on small feature maps.

Run: python3 demos/shuffle_layer.py
"""

import numpy as np

from s2ica.su import (
    SUConfig,
    apply_block_permutation,
    build_scope_matrix,
    build_transform,
    rearrangement_level,
    shuffle_alg1,
    su_forward,
)


def show(title, grid):
    print(title)
    for row in np.asarray(grid):
        print("  " + " ".join(f"{int(v):3d}" for v in row))


def main():
    # A 4x4 map with n=4 blocks: each half is rotated by half its extent.
    x = np.arange(1, 17, dtype=float).reshape(4, 4)
    out, _ = shuffle_alg1(x[:, :, None, None], 4)
    show("input", x)
    show("shuffled (n=4)", out[:, :, 0, 0])
    show("shuffled twice", shuffle_alg1(out, 4)[0][:, :, 0, 0])

    # The same rearrangement written as a block permutation matrix.
    t = build_transform(4)
    print("\nblock transform T for n=4:\n", t)
    u = build_scope_matrix(4, 4, 4)
    print("block scopes before:", u.scopes)
    print("block scopes after: ", apply_block_permutation(u, t).scopes)

    # More blocks split the map into a grid and rearrange inside each cell.
    y = np.arange(64, dtype=float).reshape(8, 8)
    print(f"\nn=16 uses a {rearrangement_level(16)}x{rearrangement_level(16)} grid of blocks")
    show("8x8 shuffled (n=16)", shuffle_alg1(y[:, :, None, None], 16)[0][:, :, 0, 0])

    # During training each sample is shuffled with probability p.
    batch = np.zeros((4, 4, 1, 10000))
    _, _, r = su_forward(SUConfig(p=0.5, seed=0), batch)
    print(f"\nfraction of samples shuffled at p=0.5: {r.mean():.4f}")


if __name__ == "__main__":
    main()

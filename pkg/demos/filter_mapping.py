"""Encode a cluster mapping in a fuse filter and read it back, with and without the seed.

    python3 demos/filter_mapping.py
"""
import numpy as np

from enccluster import fuse_filter as ff

d, kappa, seed = 50_000, 64, 1234
mapping = np.random.default_rng(0).integers(0, kappa, d)
for bits in (8, 16, 32):
    filt = ff.build_from_mapping(mapping, arity=4, bits_per_entry=bits, seed=seed)
    blob = ff.serialize_filter(filt)
    back = ff.deserialize_filter(blob, seed=seed)
    ok = np.mean(ff.reconstruct_mapping(back, d, kappa) == mapping)
    wrong = np.mean(ff.reconstruct_mapping(back, d, kappa, seed=seed + 1) == mapping)
    print(f"bpe={bits:>2}: {len(blob):>7} B ({8 * len(blob) / d:.2f} bits/key), "
          f"correct with seed {ok:.4f}, without {wrong:.4f}")

"""One encrypted aggregation round among three clients, checked against plaintext.

    python3 demos/one_round.py
"""
import numpy as np

from enccluster import protocol as pr
from enccluster.dmcfe import scheme

N, D, KAPPA, ROUND = 3, 20_000, 32, 1

pp = scheme.setup(256, N, rng_seed=0)
keys = scheme.keygen_all(pp, seed=0)
codec = pr.FixedPointCodec(fractional_bits=16)
fparams = pr.FilterParams(arity=4, bits_per_entry=16)
filter_seeds = {i: 100 + i for i in range(N)}  # shared out of band with the server

rng = np.random.default_rng(0)
previous = rng.normal(0.0, 0.3, D)
counts = [120, 80, 200]
messages, models = [], []
for i in range(N):
    local = previous + rng.normal(0.0, 0.02, D)
    msg, info = pr.client_prepare_update(local, KAPPA, counts[i], ROUND, keys[i], codec, fparams, filter_seeds[i])
    messages.append(msg)
    models.append(info.model)
    print(f"client {i}: upload {len(msg.to_bytes()):>6} B  (plain float32 would be {4 * D} B)")

result = pr.secure_aggregate(messages, pp, sum(counts), codec, filter_seeds, expected_round=ROUND,
                             hint_weights=previous)
mismatch = np.mean([np.mean(result.mappings[i] != m.mapping) for i, m in enumerate(models)])
print(f"mapping entries misread through filter collisions: {mismatch:.5f}")
# same mappings the server recovered, in plaintext: differs only by fixed-point rounding
recovered = [type(m)(m.centroids, result.mappings[i]) for i, m in enumerate(models)]
exact = pr.plaintext_aggregate(recovered, counts)
print(f"max |encrypted - plaintext (recovered mappings)| = {np.abs(result.weights - exact).max():.2e}")
truth = pr.plaintext_aggregate(models, counts)
print(f"max |encrypted - plaintext (true mappings)|      = {np.abs(result.weights - truth).max():.2e}")
ledger = pr.account_round(messages)
print(f"uplink ratio vs FedAvg: {ledger.ratio:.3f} (excluding key shares {ledger.ratio_excl_key:.3f})")

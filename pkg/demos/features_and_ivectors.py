"""From waveform to fixed-length vectors.

Each synthetic "speaker" has a pitch; each of their utterances is a noise
burst plus the fundamental and two harmonics in random order. We compute
log-mel and MFCC matrices, fit a 4-component UBM on the pooled frames, train
a rank-4 total-variability matrix and extract one length-normalized
i-vector per utterance. Utterances of the same speaker should land close
together; utterances of different speakers should not.

    python demos/features_and_ivectors.py
"""

import numpy as np

from sparta.corpus import Waveform
from sparta.dsp import extract
from sparta.gmm import fit_gmm
from sparta.ivector import baum_welch_stats, extract_ivector, train_total_variability
from sparta.synthetic import tone


def utterance(f0, rng):
    parts = [np.clip(0.3 * rng.standard_normal(2400), -1, 1),
             tone(f0, 0.2, 0.5), tone(2 * f0, 0.2, 0.4), tone(3 * f0, 0.2, 0.3)]
    x = np.concatenate([parts[i] for i in rng.permutation(4)])
    return Waveform(np.clip(x + 0.01 * rng.standard_normal(len(x)), -1, 1))


rng = np.random.default_rng(0)
pitches = rng.uniform(100, 300, 20)
speakers = np.repeat(np.arange(20), 3)
waves = [utterance(pitches[s] * (1 + 0.005 * rng.standard_normal()), rng) for s in speakers]

mel = extract(waves[0], "MEL")
mfccs = [extract(w, "MFCC").values for w in waves]
print(f"one 0.8 s utterance: MEL {mel.values.shape}, MFCC {mfccs[0].shape}")

ubm = fit_gmm(np.vstack(mfccs), n_components=4, iters=15, seed=0)
print(f"UBM log-likelihood per frame: {ubm.log_likelihoods[0]:.2f} -> {ubm.log_likelihoods[-1]:.2f}")

stats = [baum_welch_stats(ubm, m) for m in mfccs]
T = train_total_variability(stats, ubm, rank=4, iters=10, seed=0)
print(f"TV objective: {T.log_likelihoods[0]:.1f} -> {T.log_likelihoods[-1]:.1f}")
ivecs = np.array([extract_ivector(T, ubm, s, length_norm=True).values for s in stats])

cos = ivecs @ ivecs.T
same = (speakers[:, None] == speakers[None, :]) & ~np.eye(len(speakers), dtype=bool)
diff = speakers[:, None] != speakers[None, :]
print(f"mean cosine, same speaker:      {cos[same].mean():.3f}")
print(f"mean cosine, different speaker: {cos[diff].mean():.3f}")
np.fill_diagonal(cos, -np.inf)
hit = np.mean(speakers[np.argmax(cos, axis=1)] == speakers)
print(f"nearest-neighbour speaker match: {hit:.2f} (chance {1 / 20:.2f})")

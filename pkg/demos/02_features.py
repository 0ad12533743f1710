"""
From waveform to unified log-spectrogram
========================================

Synthesize a chirp, compute its 257-bin log power spectrogram, remove the
sliding 3 s mean and tile it to a fixed number of frames.
"""

import numpy as np

from afnet.features import Waveform, sliding_mean_normalize, stft_logspec, unify_length

rate = 16000
t = np.arange(int(0.6 * rate)) / rate
chirp = 0.5 * np.sin(2 * np.pi * (300 * t + 2500 * t**2))
wave = Waveform(chirp, rate)

# 25 ms Hamming frames every 10 ms, 512-point FFT.
spec = stft_logspec(wave, utt_id="chirp")
print("logspec", spec.data.shape, "frames")

# The peak bin climbs with the chirp frequency.
peaks = spec.data.argmax(axis=0)
print("peak bin every 10th frame:", peaks[::10])

# Mean removal over a centred 301-frame window (global mean for short clips).
norm = sliding_mean_normalize(spec)
print("max |row mean| after normalization: %.2e" % np.abs(norm.data.mean(axis=1)).max())

# Tiling repeats the utterance until the target length is reached.
unified = unify_length(norm, target_T=200)
print("unified", unified.data.shape)
print(f"column {spec.n_frames} equals column 0:", np.array_equal(unified.data[:, spec.n_frames], unified.data[:, 0]))

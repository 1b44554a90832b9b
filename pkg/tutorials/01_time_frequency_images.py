"""
Time-frequency images of a synthetic recording
==============================================

One recording from the synthetic corpus, seen through the STFT and the
bump-wavelet scalogram.  We look at where the energy sits during labelled
events and during background, then cut the image into the fixed-width
patches a network trains on.

Run from the repository root::

    python3 tutorials/01_time_frequency_images.py

An SVG with the average spectra lands in ``tutorial_output/``.
"""

from pathlib import Path

import numpy as np

from aedet.corpus import SynthConfig, synth_recording, upsample_labels
from aedet.svgplot import Panel, Series, write_svg
from aedet.transforms import cwt_scalogram, scales_for_band, slice_patches, standardize, stft_spectrogram

out_dir = Path("tutorial_output")
out_dir.mkdir(exist_ok=True)

# %%
# A single 10 s recording.  Events carry a 650 Hz harmonic stack; the
# background is white noise plus a hum at 300 Hz.
cfg = SynthConfig(n_recordings=1)
rec, track, _ = synth_recording(cfg, 0)
print(f"{rec.id}: {rec.duration:.1f} s at {rec.sample_rate} Hz, "
      f"{track.labels.mean():.0%} of label ticks are events")

# %%
# STFT: 512-sample Hann window, hop 256, so 256 bins and 31.25 frames/s.
stft = stft_spectrogram(rec)
print("STFT image", stft.values.shape, "frame rate", stft.frame_rate)

# Scalogram: 256 log-spaced scales between 20 Hz and 4 kHz, pooled onto the
# same frame grid.
bank = scales_for_band(256, 20, 4000)
cwt = cwt_scalogram(rec, bank)
print("CWT image ", cwt.values.shape, "frame rate", cwt.frame_rate)

# %%
# Labels arrive at 10 Hz and are held onto the image frames.
frames = upsample_labels(track, cwt.frame_rate, cwt.n_frames).labels


def class_profile(img, cls):
    cols = img.values[:, frames[:img.n_frames] == cls]
    return cols.mean(axis=1)


for name, img in (("stft", stft), ("cwt", cwt)):
    event, background = class_profile(img, 1), class_profile(img, 0)
    print(f"{name}: event peak {img.freq_axis[event.argmax()]:7.1f} Hz, "
          f"background peak {img.freq_axis[background.argmax()]:7.1f} Hz")

# %%
# The wavelet grid is geometric, so low frequencies get more rows than in
# the STFT.  Compare the spacing around the hum and the tone.
for f in (300, 650):
    i = np.abs(cwt.freq_axis - f).argmin()
    j = np.abs(stft.freq_axis - f).argmin()
    print(f"near {f} Hz: CWT row step {cwt.freq_axis[i + 1] - cwt.freq_axis[i]:.2f} Hz, "
          f"STFT bin step {stft.freq_axis[j + 1] - stft.freq_axis[j]:.2f} Hz")

panels = [Panel(f"{name} average log magnitude", "frequency (Hz)", "log magnitude", series=[
    Series(img.freq_axis, class_profile(img, 1), "event", "line"),
    Series(img.freq_axis, class_profile(img, 0), "background", "dash")])
    for name, img in (("STFT", stft), ("CWT", cwt))]
write_svg(out_dir / "01_profiles.svg", panels)

# %%
# Standardize with one scalar mean and standard deviation, then cut
# non-overlapping 10-frame patches (320 ms).  A patch is an event when at
# least half of its frames are.
z, stats = standardize(cwt)
patches = slice_patches(z, 10, frames, rec.id)
print(f"standardized with mean {stats.mean:.3f}, std {stats.std:.3f}")
print(f"{len(patches)} patches of shape {patches.patches.shape[1:]}, "
      f"{patches.y.sum()} labelled as events")

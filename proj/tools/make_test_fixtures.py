#!/usr/bin/env python3
"""Regenerates the audio fixtures in tests/data.

Each FLAC/WAV file is written by libsndfile (through the soundfile package);
the .raw files hold the integer samples as the reference decode the C++
decoder is compared against.
"""
import pathlib

import numpy as np
import soundfile as sf

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"


def main():
    rng = np.random.default_rng(1234)
    sr = 16000
    t = np.arange(sr) / sr
    x = 0.5 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 97 * t)
    x += 0.05 * rng.standard_normal(sr)
    pcm = np.clip(np.round(x * 32767), -32768, 32767).astype(np.int16)
    pcm[100] = 32767
    pcm[101] = -32768
    sf.write(OUT / "tone_16k_pcm16.flac", pcm, sr, subtype="PCM_16")
    sf.write(OUT / "tone_16k_pcm16.wav", pcm, sr, subtype="PCM_16")
    pcm.astype("<i2").tofile(OUT / "tone_16k_pcm16.raw")

    y = 0.3 * np.sin(2 * np.pi * 1234 * t[:8000]) + 0.3 * rng.standard_normal(8000)
    p24 = np.clip(np.round(y * 8388607), -8388608, 8388607).astype(np.int32)
    sf.write(OUT / "noise_16k_pcm24.flac", p24 << 8, sr, subtype="PCM_24")
    p24.astype("<i4").tofile(OUT / "noise_16k_pcm24.raw")

    sf.write(OUT / "silence_16k.flac", np.zeros(5000, dtype=np.int16), sr, subtype="PCM_16")

    stereo = np.stack([pcm[:4000], pcm[4000:8000]], axis=1)
    sf.write(OUT / "stereo_16k.flac", stereo, sr, subtype="PCM_16")
    sf.write(OUT / "stereo_16k.wav", stereo, sr, subtype="PCM_16")

    sf.write(OUT / "tone_16k_float.wav", (pcm[:2000] / 32768.0).astype(np.float32), sr,
             subtype="FLOAT")
    sf.write(OUT / "tone_8k_pcm16.flac", pcm[:8000], 8000, subtype="PCM_16")


if __name__ == "__main__":
    main()

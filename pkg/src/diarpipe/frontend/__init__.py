from .audio import MultiChannelAudio, quantize_pcm16, read_wav, write_wav
from .beamform import BeamformResult, das_beamform, gcc_phat
from .features import MelFeatures, freq_mask, logmel, read_melf, write_melf
from .stft import Spectrogram, istft, stft
from .wpe import wpe_dereverberate


def enhance(audio: MultiChannelAudio, taps: int = 10, delay: int = 3, iterations: int = 3,
            frame_length: int = 512, frame_shift: int = 128, reference_channel: int = 0) -> MultiChannelAudio:
    """WPE dereverberation followed by delay-and-sum: many channels in, one out."""
    if iterations > 0:
        spec = wpe_dereverberate(stft(audio, frame_length, frame_shift, frame_length), taps, delay, iterations)
        audio = istft(spec, audio.num_samples)
    return das_beamform(audio, reference_channel).audio


__all__ = [
    "BeamformResult", "MelFeatures", "MultiChannelAudio", "Spectrogram", "das_beamform", "enhance",
    "freq_mask", "gcc_phat", "istft", "logmel", "quantize_pcm16", "read_melf", "read_wav", "stft",
    "wpe_dereverberate", "write_melf", "write_wav",
]

#pragma once

#include <filesystem>

#include "saliency_audit/dsp/stft.hpp"

namespace sa::dsp {

/// 16-bit PCM, little-endian, mono. Samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

}  // namespace sa::dsp

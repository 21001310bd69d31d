#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace takin::audio {

// Reads a PCM16 mono WAV; rejects anything that is not 16-bit mono at the
// expected rate (the only ingest format).
std::vector<std::int16_t> read_wav(const std::string& path, int expected_rate = 16000);

void write_wav(const std::string& path, const std::vector<std::int16_t>& samples,
               int rate = 16000);

}  // namespace takin::audio

#pragma once

#include <complex>
#include <vector>

namespace takin {

// In-place iterative radix-2 FFT. Kept in-tree (rather than linking FFTW)
// so feature values are identical across builds regardless of plan choice;
// sizes here are tiny (<= 4096).
void fft_radix2(std::vector<std::complex<double>>& data);

// Power spectrum |X_k|^2 for k in [0, n/2] of a real signal zero-padded to
// fft_size (a power of two >= input length).
std::vector<double> power_spectrum(const std::vector<double>& input, std::size_t fft_size);

}  // namespace takin

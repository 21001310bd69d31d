#include "takin/fft.hpp"

#include <cmath>

#include "takin/common.hpp"

namespace takin {

void fft_radix2(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  require(n > 0 && (n & (n - 1)) == 0, ErrorKind::invalid_argument,
          "fft size must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = data[i + k];
        const std::complex<double> v = data[i + k + len / 2] * w;
        data[i + k] = u + v;
        data[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> power_spectrum(const std::vector<double>& input, std::size_t fft_size) {
  require(fft_size >= input.size(), ErrorKind::invalid_argument,
          "fft size smaller than input length");
  std::vector<std::complex<double>> buf(fft_size, {0.0, 0.0});
  for (std::size_t i = 0; i < input.size(); ++i) buf[i] = {input[i], 0.0};
  fft_radix2(buf);
  std::vector<double> power(fft_size / 2 + 1);
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
  return power;
}

}  // namespace takin

#pragma once

#include <complex>
#include <vector>

namespace oamsim {

// Thin wrapper around FFTW 2D complex transforms. Plans are cached per grid
// size and shared; fftw_execute_dft is safe to call concurrently on distinct
// arrays, plan creation is serialized internally.
namespace fft {

// In-place 2D DFT of an n x n row-major array. Unnormalized forward,
// inverse divides by n^2 so inverse(forward(x)) == x.
void forward2d(std::complex<double>* data, int n);
void inverse2d(std::complex<double>* data, int n);

inline void forward2d(std::vector<std::complex<double>>& v, int n) { forward2d(v.data(), n); }
inline void inverse2d(std::vector<std::complex<double>>& v, int n) { inverse2d(v.data(), n); }

// Frequency of FFT bin i for an n-point transform with sample pitch d,
// in cycles per meter (standard wrap-around ordering).
inline double bin_freq(int i, int n, double d) {
    int k = (i < n / 2) ? i : i - n;
    return static_cast<double>(k) / (n * d);
}

}  // namespace fft
}  // namespace oamsim

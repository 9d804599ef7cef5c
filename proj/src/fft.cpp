#include "oamsim/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace oamsim::fft {

namespace {

std::mutex g_plan_mutex;
std::map<std::pair<int, int>, fftw_plan> g_plans;

fftw_plan get_plan(int n, int sign) {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    auto key = std::make_pair(n, sign);
    auto it = g_plans.find(key);
    if (it != g_plans.end()) return it->second;
    // Dummy buffer for planning; FFTW_UNALIGNED lets the plan run on any
    // caller-provided array via fftw_execute_dft.
    fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(n) * n);
    fftw_plan p = fftw_plan_dft_2d(n, n, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    g_plans.emplace(key, p);
    return p;
}

}  // namespace

void forward2d(std::complex<double>* data, int n) {
    fftw_plan p = get_plan(n, FFTW_FORWARD);
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(data), reinterpret_cast<fftw_complex*>(data));
}

void inverse2d(std::complex<double>* data, int n) {
    fftw_plan p = get_plan(n, FFTW_BACKWARD);
    fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(data), reinterpret_cast<fftw_complex*>(data));
    const double norm = 1.0 / (static_cast<double>(n) * n);
    const std::size_t total = static_cast<std::size_t>(n) * n;
    for (std::size_t i = 0; i < total; ++i) data[i] *= norm;
}

}  // namespace oamsim::fft

#pragma once

// Independent reference implementations used only by tests.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "qmrf/dictionary.hpp"
#include "qmrf/epg.hpp"

namespace qmrf::oracle {

/// Brute-force isochromat Bloch simulation of the same FISP train: n_spins
/// magnetisation vectors with dephasing angles 2πk/n_spins, each advanced by its own
/// angle once per TR. Signal = mean transverse magnetisation at TE.
inline CVector isochromat_fisp(double t1, double t2, const SequenceSchedule& s, std::size_t n_spins) {
  std::vector<double> mx(n_spins, 0.0), my(n_spins, 0.0), mz(n_spins, 1.0);
  if (s.inversion) {
    const double e1 = std::exp(-s.inversion_time_s / t1);
    for (auto& z : mz) z = -z * e1 + (1.0 - e1);
  }
  const double te = s.echo_time_s, rest = s.repetition_time_s - te;
  auto relax = [&](double dt) {
    const double e1 = std::exp(-dt / t1), e2 = std::exp(-dt / t2);
    for (std::size_t k = 0; k < n_spins; ++k) {
      mx[k] *= e2;
      my[k] *= e2;
      mz[k] = mz[k] * e1 + (1.0 - e1);
    }
  };
  CVector sig(static_cast<Eigen::Index>(s.length()));
  for (std::size_t n = 0; n < s.length(); ++n) {
    const double a = s.flip_angles_deg[n] * std::numbers::pi / 180.0;
    const double c = std::cos(a), sn = std::sin(a);
    for (std::size_t k = 0; k < n_spins; ++k) {
      const double y = my[k], z = mz[k];
      my[k] = c * y - sn * z;
      mz[k] = sn * y + c * z;
    }
    relax(te);
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < n_spins; ++k) acc += std::complex<double>(mx[k], my[k]);
    sig[static_cast<Eigen::Index>(n)] = acc / static_cast<double>(n_spins);
    relax(rest);
    for (std::size_t k = 0; k < n_spins; ++k) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_spins);
      const std::complex<double> m = std::complex<double>(mx[k], my[k]) * std::polar(1.0, phi);
      mx[k] = m.real();
      my[k] = m.imag();
    }
  }
  return sig;
}

inline double rel_rms(const CVector& a, const CVector& ref) { return (a - ref).norm() / ref.norm(); }

/// Plain scalar scan over every atom; lowest index wins ties.
inline long brute_force_argmax(const CVector& x, const Dictionary& d) {
  long best = -1;
  double bestv = -1.0;
  for (Eigen::Index i = 0; i < d.normalized.rows(); ++i) {
    std::complex<double> ip = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) ip += x[k] * std::conj(d.normalized(i, k));
    const double s = std::norm(ip);
    if (s > bestv) {
      bestv = s;
      best = static_cast<long>(i);
    }
  }
  return best;
}

}  // namespace qmrf::oracle

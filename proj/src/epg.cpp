#include "qmrf/epg.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "qmrf/io.hpp"

#ifndef QMRF_DEFAULT_SCHEDULE
#define QMRF_DEFAULT_SCHEDULE "data/fisp_schedule_standin.csv"
#endif

namespace qmrf {

void SequenceSchedule::validate() const {
  if (flip_angles_deg.empty()) throw std::invalid_argument("schedule: T must be >= 1");
  if (!(repetition_time_s > 0) || !(echo_time_s > 0) || !(inversion_time_s > 0))
    throw std::invalid_argument("schedule: TI, TR and TE must be > 0");
  if (echo_time_s > repetition_time_s)
    throw std::invalid_argument("schedule: TE must not exceed TR");
  for (std::size_t i = 0; i < flip_angles_deg.size(); ++i) {
    const double a = flip_angles_deg[i];
    if (!(a >= 0.0 && a <= 180.0))
      throw std::invalid_argument("schedule: flip angle " + std::to_string(i) + " outside [0, 180]");
  }
}

std::string SequenceSchedule::hash() const {
  io::Hasher h;
  h.doubles(flip_angles_deg)
      .pod(inversion_time_s)
      .pod(repetition_time_s)
      .pod(echo_time_s)
      .pod(static_cast<unsigned char>(inversion));
  return h.hex();
}

Fingerprint epg_fisp(double t1_s, double t2_s, const SequenceSchedule& schedule,
                     std::size_t n_states) {
  if (!std::isfinite(t1_s) || !std::isfinite(t2_s))
    throw SimulationError("epg_fisp: non-finite T1/T2");
  if (!(t1_s > 0) || !(t2_s > 0)) throw std::invalid_argument("epg_fisp: T1 and T2 must be > 0");
  if (n_states < 2) throw std::invalid_argument("epg_fisp: n_states must be >= 2");
  schedule.validate();

  const std::size_t K = n_states;
  std::vector<cd> fp(K, 0.0), fm(K, 0.0), z(K, 0.0);
  z[0] = 1.0;

  if (schedule.inversion) {
    const double e1 = std::exp(-schedule.inversion_time_s / t1_s);
    z[0] = -z[0] * e1 + (1.0 - e1);
  }

  const double te = schedule.echo_time_s, tr_rest = schedule.repetition_time_s - te;
  const double e1_te = std::exp(-te / t1_s), e2_te = std::exp(-te / t2_s);
  const double e1_tr = std::exp(-tr_rest / t1_s), e2_tr = std::exp(-tr_rest / t2_s);

  auto relax = [&](double e1, double e2) {
    for (std::size_t k = 0; k < K; ++k) {
      fp[k] *= e2;
      fm[k] *= e2;
      z[k] *= e1;
    }
    z[0] += 1.0 - e1;
  };

  const cd I(0.0, 1.0);
  Fingerprint out;
  out.t2_exceeds_t1 = t2_s > t1_s;
  out.signal.resize(static_cast<Eigen::Index>(schedule.length()));

  for (std::size_t n = 0; n < schedule.length(); ++n) {
    const double a = schedule.flip_angles_deg[n] * std::numbers::pi / 180.0;
    const double c2 = std::cos(a / 2) * std::cos(a / 2);
    const double s2 = std::sin(a / 2) * std::sin(a / 2);
    const double sa = std::sin(a), ca = std::cos(a);
    // Rotation about x with zero RF phase.
    for (std::size_t k = 0; k < K; ++k) {
      const cd p = fp[k], m = fm[k], l = z[k];
      fp[k] = c2 * p + s2 * m - I * sa * l;
      fm[k] = s2 * p + c2 * m + I * sa * l;
      z[k] = -0.5 * I * sa * p + 0.5 * I * sa * m + ca * l;
    }
    relax(e1_te, e2_te);
    out.signal[static_cast<Eigen::Index>(n)] = fp[0];
    relax(e1_tr, e2_tr);
    // Dephasing: F+ states move up, F- states move down; F+0 mirrors F-0.
    for (std::size_t k = K - 1; k > 0; --k) fp[k] = fp[k - 1];
    for (std::size_t k = 0; k + 1 < K; ++k) fm[k] = fm[k + 1];
    fm[K - 1] = 0.0;
    fp[0] = std::conj(fm[0]);
  }
  if (!out.signal.allFinite()) throw SimulationError("epg_fisp: non-finite signal");
  return out;
}

std::filesystem::path default_schedule_path() { return QMRF_DEFAULT_SCHEDULE; }

SequenceSchedule default_flip_schedule() { return load_schedule_csv(default_schedule_path()); }

SequenceSchedule load_schedule_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw io::FormatError("cannot open schedule file: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw io::FormatError(path.string() + ": empty schedule file");
  if (line.rfind("index,flip_deg", 0) != 0)
    throw io::FormatError(path.string() + ": expected header 'index,flip_deg'");
  SequenceSchedule s;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": missing comma");
    std::size_t idx = 0;
    double flip = 0.0;
    const char* b = line.data();
    auto r1 = std::from_chars(b, b + comma, idx);
    auto r2 = std::from_chars(b + comma + 1, b + line.size(), flip);
    if (r1.ec != std::errc() || r1.ptr != b + comma || r2.ec != std::errc() ||
        r2.ptr != b + line.size())
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row '" +
                            line + "'");
    if (idx != s.flip_angles_deg.size())
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": expected index " +
                            std::to_string(s.flip_angles_deg.size()));
    s.flip_angles_deg.push_back(flip);
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
  return s;
}

void save_schedule_csv(const std::filesystem::path& path, const SequenceSchedule& schedule) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io::FormatError("cannot open for writing: " + path.string());
  f << "index,flip_deg\n";
  char buf[64];
  for (std::size_t i = 0; i < schedule.length(); ++i) {
    auto r = std::to_chars(buf, buf + sizeof(buf), schedule.flip_angles_deg[i]);
    f << i << ',' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\n';
  }
}

}  // namespace qmrf

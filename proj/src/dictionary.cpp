#include "qmrf/dictionary.hpp"

#include <algorithm>
#include <cmath>

#include "qmrf/io.hpp"

namespace qmrf {

namespace {

std::vector<double> log_axis(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  // Pin the endpoints so they sit exactly on the documented range.
  v.front() = lo;
  v.back() = hi;
  return v;
}

}  // namespace

void GridSpec::validate() const {
  if (n_t1 == 0 || n_t2 == 0) throw std::invalid_argument("grid: empty axis");
  if (!(t1_min > 0 && t1_min <= t1_max && t2_min > 0 && t2_min <= t2_max))
    throw std::invalid_argument("grid: invalid range");
  if (t1_min < kT1Min || t1_max > kT1Max || t2_min < kT2Min || t2_max > kT2Max)
    throw std::invalid_argument("grid: range exceeds the simulator domain [0.01,6]x[0.004,4]");
}

std::vector<GridPoint> GridSpec::points() const {
  validate();
  const auto a1 = log_axis(t1_min, t1_max, n_t1);
  const auto a2 = log_axis(t2_min, t2_max, n_t2);
  std::vector<GridPoint> g;
  g.reserve(n_t1 * n_t2);
  for (double t1 : a1)
    for (double t2 : a2)
      if (!require_t2_le_t1 || t2 <= t1) g.push_back({t1, t2});
  return g;
}

Dictionary Dictionary::from_atoms(CMatrix atoms, std::vector<GridPoint> grid, GridSpec spec,
                                  std::string schedule_hash, std::string basis_hash) {
  if (static_cast<std::size_t>(atoms.rows()) != grid.size())
    throw std::invalid_argument("dictionary: atom rows and grid size differ");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < atoms.rows(); ++i)
    if (atoms.row(i).norm() > 0.0) keep.push_back(i);
  if (keep.empty()) throw std::invalid_argument("dictionary: no nonzero atoms");

  Dictionary d;
  d.spec = spec;
  d.schedule_hash = std::move(schedule_hash);
  d.basis_hash = std::move(basis_hash);
  const auto n = static_cast<Eigen::Index>(keep.size());
  d.atoms.resize(n, atoms.cols());
  d.normalized.resize(n, atoms.cols());
  d.norms.resize(n);
  d.grid.reserve(keep.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = keep[static_cast<std::size_t>(r)];
    d.atoms.row(r) = atoms.row(src);
    d.norms[r] = atoms.row(src).norm();
    d.normalized.row(r) = atoms.row(src) / d.norms[r];
    d.grid.push_back(grid[static_cast<std::size_t>(src)]);
  }
  return d;
}

Dictionary build_dictionary(const SequenceSchedule& schedule, const std::vector<GridPoint>& grid,
                            std::size_t n_states) {
  if (grid.empty()) throw std::invalid_argument("build_dictionary: empty grid");
  schedule.validate();
  CMatrix atoms(static_cast<Eigen::Index>(grid.size()),
                static_cast<Eigen::Index>(schedule.length()));
  for (std::size_t i = 0; i < grid.size(); ++i)
    atoms.row(static_cast<Eigen::Index>(i)) =
        epg_fisp(grid[i].t1_s, grid[i].t2_s, schedule, n_states).signal.transpose();
  // Explicit grids record their bounding box; zero counts mark them as non-factorised.
  GridSpec spec;
  spec.n_t1 = spec.n_t2 = 0;
  spec.t1_min = spec.t1_max = grid[0].t1_s;
  spec.t2_min = spec.t2_max = grid[0].t2_s;
  for (const auto& g : grid) {
    spec.t1_min = std::min(spec.t1_min, g.t1_s);
    spec.t1_max = std::max(spec.t1_max, g.t1_s);
    spec.t2_min = std::min(spec.t2_min, g.t2_s);
    spec.t2_max = std::max(spec.t2_max, g.t2_s);
  }
  return Dictionary::from_atoms(std::move(atoms), grid, spec, schedule.hash());
}

Dictionary build_dictionary(const SequenceSchedule& schedule, const GridSpec& spec,
                            std::size_t n_states) {
  auto d = build_dictionary(schedule, spec.points(), n_states);
  d.spec = spec;
  return d;
}

void save_dictionary(const std::filesystem::path& stem, const Dictionary& d) {
  auto bin = stem, man = stem;
  bin += ".bin";
  man += ".json";
  io::write_c128(bin, std::span<const cd>(d.atoms.data(), static_cast<std::size_t>(d.atoms.size())));
  std::vector<double> t1, t2;
  for (const auto& g : d.grid) {
    t1.push_back(g.t1_s);
    t2.push_back(g.t2_s);
  }
  io::json j{{"format", "qmrf-dictionary-v1"},
             {"dtype", "complex-as-float64-pairs-le"},
             {"N", d.size()},
             {"length", d.length()},
             {"grid_spec",
              {{"t1_min", d.spec.t1_min},
               {"t1_max", d.spec.t1_max},
               {"n_t1", d.spec.n_t1},
               {"t2_min", d.spec.t2_min},
               {"t2_max", d.spec.t2_max},
               {"n_t2", d.spec.n_t2},
               {"require_t2_le_t1", d.spec.require_t2_le_t1}}},
             {"grid_order", "row-major, T1 outer, T2 inner"},
             {"schedule_hash", d.schedule_hash},
             {"basis_hash", d.basis_hash},
             {"t1_s", t1},
             {"t2_s", t2}};
  io::write_json(man, j);
}

Dictionary load_dictionary(const std::filesystem::path& stem) {
  auto bin = stem, man = stem;
  bin += ".bin";
  man += ".json";
  const auto j = io::read_json(man);
  const auto n = j.at("N").get<std::size_t>(), len = j.at("length").get<std::size_t>();
  const auto flat = io::read_c128(bin);
  if (flat.size() != n * len)
    throw io::FormatError(bin.string() + ": expected " + std::to_string(n * len) +
                          " complex values, found " + std::to_string(flat.size()));
  const auto t1 = j.at("t1_s").get<std::vector<double>>();
  const auto t2 = j.at("t2_s").get<std::vector<double>>();
  if (t1.size() != n || t2.size() != n) throw io::FormatError(man.string() + ": grid size mismatch");
  CMatrix atoms(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(len));
  std::copy(flat.begin(), flat.end(), atoms.data());
  std::vector<GridPoint> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = {t1[i], t2[i]};
  const auto& gs = j.at("grid_spec");
  GridSpec spec{gs.at("t1_min"), gs.at("t1_max"), gs.at("n_t1"),          gs.at("t2_min"),
                gs.at("t2_max"), gs.at("n_t2"),   gs.at("require_t2_le_t1")};
  return Dictionary::from_atoms(std::move(atoms), std::move(grid), spec,
                                j.at("schedule_hash").get<std::string>(),
                                j.at("basis_hash").get<std::string>());
}

}  // namespace qmrf

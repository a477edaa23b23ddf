#include "qmrf/matching.hpp"

#include <algorithm>
#include <cmath>

namespace qmrf {

QMaps MatchResult::to_qmaps() const {
  QMaps q;
  q.H = H;
  q.W = W;
  q.t1_s = t1_s;
  q.t2_s = t2_s;
  q.pd_re = pd_re;
  q.pd_im = pd_im;
  q.head_mask = head_mask;
  return q;
}

MatchResult dictionary_match(const Tsmi& x, const Dictionary& dict, const std::vector<std::uint8_t>& head_mask,
                             std::size_t block) {
  const std::size_t n = x.H * x.W;
  if (static_cast<std::size_t>(x.data.rows()) != n)
    throw std::invalid_argument("dictionary_match: TSMI has " + std::to_string(x.data.rows()) + " rows, expected " +
                                std::to_string(n));
  if (head_mask.size() != n) throw std::invalid_argument("dictionary_match: head mask size mismatch");
  if (dict.size() == 0) throw std::invalid_argument("dictionary_match: empty dictionary");
  if (static_cast<std::size_t>(x.data.cols()) != dict.length())
    throw BasisMismatch("dictionary_match: TSMI length " + std::to_string(x.data.cols()) +
                        " differs from dictionary length " + std::to_string(dict.length()));
  if (!x.basis_hash.empty() && x.basis_hash != dict.basis_hash)
    throw BasisMismatch("dictionary_match: TSMI basis " + x.basis_hash + " differs from dictionary basis '" +
                        dict.basis_hash + "'");
  if (block == 0) block = 1;

  MatchResult r;
  r.H = x.H;
  r.W = x.W;
  r.t1_s.assign(n, 0.0);
  r.t2_s.assign(n, 0.0);
  r.pd_re.assign(n, 0.0);
  r.pd_im.assign(n, 0.0);
  r.correlation.assign(n, 0.0);
  r.index.assign(n, -1);
  r.head_mask = head_mask;

  std::vector<Eigen::Index> voxels;
  for (std::size_t v = 0; v < n; ++v)
    if (head_mask[v] && x.data.row(static_cast<Eigen::Index>(v)).squaredNorm() > 0.0)
      voxels.push_back(static_cast<Eigen::Index>(v));

  const CMatrix Dh = dict.normalized.adjoint();  // L x N
  const Eigen::Index L = x.data.cols();
  for (std::size_t b0 = 0; b0 < voxels.size(); b0 += block) {
    const std::size_t nb = std::min(block, voxels.size() - b0);
    CMatrix Xb(static_cast<Eigen::Index>(nb), L);
    for (std::size_t i = 0; i < nb; ++i) Xb.row(static_cast<Eigen::Index>(i)) = x.data.row(voxels[b0 + i]);
    const CMatrix C = Xb * Dh;  // <x_v, d̂_i> = Σ x conj(d̂)
    for (std::size_t i = 0; i < nb; ++i) {
      const auto row = C.row(static_cast<Eigen::Index>(i));
      Eigen::Index best = 0;
      double bestv = std::norm(row[0]);
      for (Eigen::Index j = 1; j < row.size(); ++j) {
        const double s = std::norm(row[j]);
        if (s > bestv) {
          bestv = s;
          best = j;
        }
      }
      const auto v = static_cast<std::size_t>(voxels[b0 + i]);
      const cd ip = row[best];
      const cd pd = ip / dict.norms[best];
      r.index[v] = best;
      r.t1_s[v] = dict.grid[static_cast<std::size_t>(best)].t1_s;
      r.t2_s[v] = dict.grid[static_cast<std::size_t>(best)].t2_s;
      r.pd_re[v] = pd.real();
      r.pd_im[v] = pd.imag();
      r.correlation[v] = std::min(1.0, std::abs(ip) / Xb.row(static_cast<Eigen::Index>(i)).norm());
    }
  }
  return r;
}

MatchResult svd_mrf_reconstruct(const KSpaceData& y, const AcquisitionOperator& op, const Dictionary& dict,
                                const std::vector<std::uint8_t>& head_mask) {
  return dictionary_match(op.backproject(y), dict, head_mask);
}

}  // namespace qmrf

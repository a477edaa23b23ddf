#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "qmrf/dataset.hpp"
#include "qmrf/dictionary.hpp"
#include "qmrf/phantom.hpp"

using namespace qmrf;

namespace {

struct Fixture {
  SequenceSchedule schedule = default_flip_schedule();
  std::shared_ptr<const TemporalBasis> basis;
  Fixture() {
    GridSpec spec;
    spec.n_t1 = 20;
    spec.n_t2 = 15;
    basis = std::make_shared<const TemporalBasis>(fit_basis(build_dictionary(schedule, spec), 10));
  }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

}  // namespace

TEST(Phantom, MaskDomainAndDeterminism) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const auto q = make_brain_phantom(64, 64, seed);
    EXPECT_NO_THROW(q.validate());
    std::size_t inside = 0;
    for (std::size_t v = 0; v < q.size(); ++v) {
      if (!q.head_mask[v]) {
        EXPECT_EQ(q.t1_s[v], 0.0);
        EXPECT_EQ(q.pd_re[v], 0.0);
        EXPECT_EQ(q.pd_im[v], 0.0);
      } else {
        ++inside;
        EXPECT_LE(std::abs(q.pd(v)), 1.0);
      }
    }
    EXPECT_GT(inside, 64u * 64u / 4);
    EXPECT_EQ(q.head_mask[0], 0);
    const auto r = make_brain_phantom(64, 64, seed);
    EXPECT_EQ(q.t1_s, r.t1_s);
    EXPECT_EQ(q.pd_im, r.pd_im);
  }
  EXPECT_NE(make_brain_phantom(32, 32, 1).t1_s, make_brain_phantom(32, 32, 2).t1_s);
  EXPECT_THROW(make_brain_phantom(15, 32, 1), std::invalid_argument);
}

TEST(Phantom, TsmiLinearInPd) {
  const auto model = make_epg_model(fx().schedule, fx().basis);
  auto q = make_brain_phantom(24, 24, 7);
  const auto x = synthesize_tsmi(q, model, "");
  const cd c(0.3, -1.7);
  auto q2 = q;
  for (std::size_t v = 0; v < q.size(); ++v) {
    const cd p = c * q.pd(v);
    q2.pd_re[v] = p.real();
    q2.pd_im[v] = p.imag();
  }
  const auto x2 = synthesize_tsmi(q2, model, "");
  EXPECT_LE((x2.data - c * x.data).cwiseAbs().maxCoeff(), 1e-14 * x.data.cwiseAbs().maxCoeff());
  for (std::size_t v = 0; v < q.size(); ++v)
    if (!q.head_mask[v]) {
      EXPECT_EQ(x.data.row(static_cast<Eigen::Index>(v)).norm(), 0.0);
    }
}

TEST(Phantom, GridPointVoxelMatchesCompressedAtom) {
  GridSpec spec;
  spec.n_t1 = 5;
  spec.n_t2 = 4;
  const auto d = compress_dictionary(build_dictionary(fx().schedule, spec), *fx().basis);
  auto q = QMaps::zeros(16, 16);
  const std::size_t v = 5 * 16 + 7;
  q.head_mask[v] = 1;
  q.t1_s[v] = d.grid[6].t1_s;
  q.t2_s[v] = d.grid[6].t2_s;
  q.pd_re[v] = 0.4;
  q.pd_im[v] = -0.2;
  const auto x = synthesize_tsmi(q, make_epg_model(fx().schedule, fx().basis), "");
  const CMatrix expect = cd(0.4, -0.2) * d.atoms.row(6);
  EXPECT_LE((x.data.row(v) - expect).norm() / expect.norm(), 1e-10);
}

TEST(Phantom, ModelRejectsOutOfDomain) {
  const auto model = make_epg_model(fx().schedule, fx().basis);
  EXPECT_THROW(model(7.0, 0.1), std::invalid_argument);
  EXPECT_THROW(model(1.0, 0.001), std::invalid_argument);
}

TEST(Phantom, KspaceZeroAndProjector) {
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(16, 16, 20, 200));
  AcquisitionOperator op(mask, fx().basis);
  EXPECT_EQ(simulate_kspace(Tsmi{CMatrix::Zero(256, 10), 16, 16, ""}, op).samples.norm(), 0.0);
  const auto q = make_brain_phantom(16, 16, 3);
  const auto x = synthesize_tsmi(q, make_epg_model(fx().schedule, fx().basis), "");
  const auto y = simulate_kspace(x, op);
  EXPECT_EQ(y.samples.rows(), 20);
  EXPECT_EQ(y.samples.cols(), 200);
  EXPECT_EQ(y.mask_ref, op.mask_hash());
}

TEST(Phantom, FullScaleKspaceShape) {
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(224, 224, 771, 200));
  AcquisitionOperator op(mask, fx().basis);
  const auto y = op.forward(Tsmi{CMatrix::Zero(224 * 224, 10), 224, 224, ""});
  EXPECT_EQ(y.samples.rows(), 771);
  EXPECT_EQ(y.samples.cols(), 200);
  EXPECT_EQ(samples_for_ratio(224, 224, 65.0), 771u);
}

TEST(Dataset, ConfigsAndSelfSupervisedContract) {
  EXPECT_EQ(DatasetConfig::desk().n_train, 20u);
  EXPECT_EQ(DatasetConfig::desk().n_test, 5u);
  EXPECT_EQ(DatasetConfig::desk().H, 64u);
  EXPECT_EQ(DatasetConfig::full_scale().n_train, 105u);
  EXPECT_EQ(DatasetConfig::full_scale().n_test, 15u);
  EXPECT_EQ(DatasetConfig::full_scale().H, 224u);

  DatasetConfig cfg;
  cfg.n_train = 3;
  cfg.n_test = 2;
  cfg.H = cfg.W = 24;
  const auto setup = AcquisitionSetup::create(fx().schedule, fx().basis, Pattern::spiral, 24, 24,
                                              samples_for_ratio(24, 24, 65.0));
  const auto ds = build_dataset(cfg, setup);
  EXPECT_EQ(ds.indices(Split::train).size(), 3u);
  EXPECT_EQ(ds.indices(Split::test).size(), 2u);
  for (auto i : ds.indices(Split::train)) EXPECT_FALSE(ds.items[i].truth.has_value());
  for (auto i : ds.indices(Split::test)) EXPECT_TRUE(ds.items[i].truth.has_value());
  SelfSupervisedReader r(ds, Split::train);
  EXPECT_EQ(r.size(), 3u);
  EXPECT_EQ(r.kspace(0).samples.cols(), 200);
  EXPECT_THROW(SupervisedReader(ds, Split::train), MissingGroundTruth);
  EXPECT_NO_THROW(SupervisedReader(ds, Split::test));

  const auto ds2 = build_dataset(cfg, setup);
  EXPECT_EQ(ds.manifest_hash(), ds2.manifest_hash());

  const auto dir = std::filesystem::temp_directory_path() / "qmrf_ds_rt";
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  const auto l = load_dataset(dir);
  EXPECT_EQ(l.manifest_hash(), ds.manifest_hash());
  EXPECT_TRUE(std::filesystem::exists(dir / "train_0" / "manifest.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "train_0" / "t1_s.bin"));

  cfg.keep_train_truth = true;
  const auto ds3 = build_dataset(cfg, setup);
  EXPECT_NO_THROW(SupervisedReader(ds3, Split::train));
}

#include <doctest.h>

#include <cmath>

#include "beamsel/beamformer.hpp"
#include "beamsel/channel.hpp"
#include "beamsel/errors.hpp"
#include "beamsel/rng.hpp"

using namespace beamsel;

namespace {

SystemDims dims_for(int n_t, int n_rs, int n_s, int n_rf_t, int n_rf_r,
                    double rho = 1.0, double sigma_n2 = 1.0) {
  SystemDims d;
  d.n_t = n_t;
  d.n_r = n_rs;
  d.n_rs = n_rs;
  d.n_s = n_s;
  d.n_rf_t = n_rf_t;
  d.n_rf_r = n_rf_r;
  d.rho = rho;
  d.sigma_n2 = sigma_n2;
  return d;
}

CMat random_complex(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  CMat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.complex_gaussian(1.0);
  return m;
}

CMat subchannel(int n_rs, int n_t, std::uint64_t seed) {
  ChannelParams p;
  p.tx_geometry = ArrayGeometry::ula(n_t);
  p.rx_geometry = ArrayGeometry::ula(n_rs);
  return generate_channel(p, seed).h;
}

bool trace_non_increasing(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] > trace[i - 1] + 1e-12) return false;
  return true;
}

}  // namespace

TEST_CASE("unconstrained: dominant singular direction of a diagonal matrix") {
  CMat h = CMat::Zero(2, 2);
  h(0, 0) = 2.0;
  h(1, 1) = 1.0;
  const auto ub = unconstrained_beamformers(h, dims_for(2, 2, 1, 1, 1));
  CHECK(std::abs(ub.f_opt(0, 0)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(ub.f_opt(1, 0)) < 1e-10);
}

TEST_CASE("unconstrained: orthonormal precoder columns") {
  const CMat h = random_complex(4, 6, 3);
  const auto ub = unconstrained_beamformers(h, dims_for(6, 4, 2, 2, 2));
  const CMat gram = ub.f_opt.adjoint() * ub.f_opt;
  CHECK((gram - CMat::Identity(2, 2)).norm() < 1e-10);
}

TEST_CASE("unconstrained: deterministic output via phase normalization") {
  const CMat h = random_complex(4, 6, 4);
  const auto a = unconstrained_beamformers(h, dims_for(6, 4, 2, 2, 2));
  const auto b = unconstrained_beamformers(h, dims_for(6, 4, 2, 2, 2));
  CHECK((a.f_opt - b.f_opt).norm() == 0.0);
  // Largest-magnitude entry of each column is real-positive.
  for (int c = 0; c < 2; ++c) {
    Eigen::Index imax = 0;
    a.f_opt.col(c).cwiseAbs().maxCoeff(&imax);
    CHECK(a.f_opt(imax, c).imag() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(a.f_opt(imax, c).real() > 0.0);
  }
}

TEST_CASE("unconstrained: rank-deficient channel rejected") {
  CMat h = CMat::Zero(4, 6);
  h.row(0) = random_complex(1, 6, 5);
  h.row(1) = h.row(0);
  h.row(2) = 2.0 * h.row(0);
  h.row(3) = 3.0 * h.row(0);
  CHECK_THROWS_AS(unconstrained_beamformers(h, dims_for(6, 4, 2, 2, 2)),
                  RankDeficient);
}

TEST_CASE("unconstrained combiner matches a gradient-descent MMSE oracle") {
  // Minimize E||s - W^H(sqrt(rho) H F s + n)||^2 numerically at rho = 1 and
  // compare with the closed form.
  const auto dims = dims_for(4, 4, 2, 2, 2, 1.0, 0.7);
  const CMat h = random_complex(4, 4, 6);
  const auto ub = unconstrained_beamformers(h, dims);

  const CMat a = h * ub.f_opt;  // n_rs x n_s
  const double inv_ns = 1.0 / dims.n_s;
  CMat w = CMat::Zero(4, 2);
  // Objective: tr[(I - W^H A)(I - W^H A)^H]/n_s + sigma^2 tr(W^H W).
  // Wirtinger gradient: -(A/n_s)(I - W^H A)^H + sigma^2 W.
  for (int iter = 0; iter < 20000; ++iter) {
    const CMat resid = CMat::Identity(2, 2) - w.adjoint() * a;
    const CMat grad = -(inv_ns)*a * resid.adjoint() + dims.sigma_n2 * w;
    w -= 0.05 * grad;
    if (grad.norm() < 1e-12) break;
  }
  CHECK((w - ub.w_opt).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("spectral efficiency: scalar SNR channel") {
  const auto dims = dims_for(1, 1, 1, 1, 1, 1.0, 1.0);
  CMat one = CMat::Ones(1, 1);
  HybridBeamformers bf{one, one, one, one};
  CHECK(spectral_efficiency(one, bf, dims) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("spectral efficiency: zero precoder gives exactly zero rate") {
  const auto dims = dims_for(6, 4, 2, 2, 2);
  const CMat h = random_complex(4, 6, 8);
  HybridBeamformers bf;
  bf.f_rf = random_phase_matrix(6, 2, 1.0 / std::sqrt(6.0), 1);
  bf.f_bb = CMat::Zero(2, 2);
  bf.w_rf = random_phase_matrix(4, 2, 0.5, 2);
  bf.w_bb = CMat::Identity(2, 2);
  CHECK(spectral_efficiency(h, bf, dims) == 0.0);
}

TEST_CASE("spectral efficiency: matches a direct log-det oracle") {
  const auto dims = dims_for(4, 4, 2, 2, 2, 2.5, 0.8);
  const CMat h = random_complex(4, 4, 9);
  const CMat f = random_complex(4, 2, 10);
  const CMat w = random_complex(4, 2, 11);

  // Explicitly form the n_s x n_s matrix and take its determinant.
  const CMat gram = w.adjoint() * w;
  const CMat t = w.adjoint() * h * f;
  const CMat m = CMat::Identity(2, 2) +
                 (dims.rho / (dims.n_s * dims.sigma_n2)) *
                     gram.inverse() * t * t.adjoint();
  const double oracle = std::log2(m.determinant().real());

  CHECK(rate_for(h, f, w, dims) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("spectral efficiency: singular combiner detected") {
  const auto dims = dims_for(4, 4, 2, 2, 2);
  const CMat h = random_complex(4, 4, 12);
  CMat w(4, 2);
  w.col(0) = random_complex(4, 1, 13);
  w.col(1) = w.col(0);  // rank 1 combiner
  CHECK_THROWS_AS(rate_for(h, random_complex(4, 2, 14), w, dims),
                  SingularCombiner);
}

TEST_CASE("spectral efficiency: invariant to unitary stream rotations") {
  const auto dims = dims_for(6, 4, 2, 2, 2, 1.7, 0.9);
  const CMat h = random_complex(4, 6, 15);
  HybridBeamformers bf;
  bf.f_rf = random_phase_matrix(6, 2, 1.0 / std::sqrt(6.0), 16);
  bf.f_bb = random_complex(2, 2, 17);
  bf.w_rf = random_phase_matrix(4, 2, 0.5, 18);
  bf.w_bb = random_complex(2, 2, 19);
  const double base = spectral_efficiency(h, bf, dims);

  // Unitary factors from the QR of random matrices.
  const CMat u = Eigen::HouseholderQR<CMat>(random_complex(2, 2, 20))
                     .householderQ();
  const CMat v = Eigen::HouseholderQR<CMat>(random_complex(2, 2, 21))
                     .householderQ();
  HybridBeamformers rotated = bf;
  rotated.f_bb = bf.f_bb * u;
  rotated.w_bb = bf.w_bb * v;
  CHECK(spectral_efficiency(h, rotated, dims) ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("rate_with_unconstrained: definitional reduction and basics") {
  const auto dims = dims_for(6, 4, 2, 2, 2, 2.0, 1.0);
  const CMat h = subchannel(4, 6, 31);
  const auto ub = unconstrained_beamformers(h, dims);
  CHECK(rate_with_unconstrained(h, dims) ==
        doctest::Approx(rate_for(h, ub.f_opt, ub.w_opt, dims)).epsilon(1e-12));

  // Capacity is monotone in rho.
  auto hi = dims;
  hi.rho = 2.0 * dims.rho;
  CHECK(rate_with_unconstrained(h, hi) >=
        rate_with_unconstrained(h, dims) - 1e-12);

  // 1x1 with h = 1 and rho/sigma^2 = 3 gives log2(4) = 2 bits.
  const auto scalar_dims = dims_for(1, 1, 1, 1, 1, 3.0, 1.0);
  CHECK(rate_with_unconstrained(CMat::Ones(1, 1), scalar_dims) ==
        doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("design_precoder: representable target reaches near-zero objective") {
  const auto dims = dims_for(4, 4, 1, 1, 1);
  const CMat f_opt = CMat::Ones(4, 1) / 2.0;  // feasible modulus 1/sqrt(4)
  MoSettings mo;
  mo.seed = 5;
  const auto d = design_precoder(f_opt, dims, mo);
  CHECK(d.objective_trace.back() < 1e-10);
  CHECK(trace_non_increasing(d.objective_trace));
}

TEST_CASE("design_precoder: monotone objective trace on a random target") {
  const auto dims = dims_for(16, 8, 2, 4, 2);
  const CMat h = subchannel(8, 16, 33);
  SystemDims hdims = dims;
  const auto ub = unconstrained_beamformers(h, hdims);
  MoSettings mo;
  mo.seed = 6;
  const auto d = design_precoder(ub.f_opt, dims, mo);
  CHECK(trace_non_increasing(d.objective_trace));
  // Feasibility after the design.
  const double radius = 1.0 / std::sqrt(16.0);
  for (Eigen::Index i = 0; i < d.f_rf.size(); ++i)
    CHECK(std::abs(std::abs(d.f_rf(i)) - radius) < 1e-8);
  CHECK((d.f_rf * d.f_bb).squaredNorm() ==
        doctest::Approx(static_cast<double>(dims.n_s)).epsilon(1e-8));
}

TEST_CASE("design_precoder: near the randomized global-search oracle") {
  const auto dims = dims_for(8, 4, 1, 2, 1);
  const CMat h = subchannel(4, 8, 34);
  const auto ub = unconstrained_beamformers(h, dims);

  // 1e5 random-phase restarts with the exact least-squares baseband factor.
  Rng rng(900);
  double best = std::numeric_limits<double>::infinity();
  const double radius = 1.0 / std::sqrt(8.0);
  for (int trial = 0; trial < 100000; ++trial) {
    const CMat f_rf = random_phase_matrix(8, 2, radius, rng.integer(1ULL << 62));
    const CMat f_bb =
        (f_rf.adjoint() * f_rf).ldlt().solve(f_rf.adjoint() * ub.f_opt);
    best = std::min(best, (ub.f_opt - f_rf * f_bb).norm());
  }
  const double oracle_gamma = best / (8.0 * 1.0);

  MoSettings mo;
  mo.seed = 7;
  mo.restarts = 3;
  const auto d = design_precoder(ub.f_opt, dims, mo);
  // The trace holds the pre-rescale objective, the quantity the oracle bounds.
  const double design_gamma = std::sqrt(d.objective_trace.back()) / 8.0;
  CHECK(design_gamma <= oracle_gamma * 1.05 + 1e-9);
}

TEST_CASE("design_combiner: representable target and monotone trace") {
  const auto dims = dims_for(8, 4, 1, 2, 1);
  const CMat h = subchannel(4, 8, 35);
  const auto ub = unconstrained_beamformers(h, dims);
  MoSettings mo;
  mo.seed = 8;
  const auto pre = design_precoder(ub.f_opt, dims, mo);

  // Representable combiner target.
  const CMat w_target = CMat::Ones(4, 1) / 2.0;
  const auto c =
      design_combiner(w_target, h, pre.f_rf, pre.f_bb, dims, mo);
  CHECK((w_target - c.w_rf * c.w_bb).norm() < 1e-8);
  CHECK(trace_non_increasing(c.objective_trace));
}

TEST_CASE("design_combiner: near the randomized global-search oracle") {
  const auto dims = dims_for(8, 4, 1, 2, 2);
  const CMat h = subchannel(4, 8, 36);
  const auto ub = unconstrained_beamformers(h, dims);
  MoSettings mo;
  mo.seed = 9;
  mo.restarts = 3;
  const auto pre = design_precoder(ub.f_opt, dims, mo);
  const auto comb = design_combiner(ub.w_opt, h, pre.f_rf, pre.f_bb, dims, mo);
  const double design_err = (ub.w_opt - comb.w_rf * comb.w_bb).norm();

  const CMat hf = h * pre.f_rf * pre.f_bb;
  const CMat lambda = (dims.rho / dims.n_s) * hf * hf.adjoint() +
                      dims.sigma_n2 * CMat::Identity(4, 4);
  Rng rng(901);
  double best = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 100000; ++trial) {
    const CMat w_rf = random_phase_matrix(4, 2, 0.5, rng.integer(1ULL << 62));
    const CMat gram = w_rf.adjoint() * lambda * w_rf;
    const CMat w_bb = gram.llt().solve(w_rf.adjoint() * lambda * ub.w_opt);
    best = std::min(best, (ub.w_opt - w_rf * w_bb).norm());
  }
  CHECK(design_err <= best * 1.05 + 1e-9);
}

TEST_CASE("design_hybrid: feasibility and hybrid <= unconstrained") {
  ChannelParams p;
  p.tx_geometry = ArrayGeometry::ula(16);
  p.rx_geometry = ArrayGeometry::ula(4);
  SystemDims dims = dims_for(16, 4, 1, 2, 2, 10.0, 1.0);
  MoSettings mo;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const CMat h = generate_channel(p, seed).h;
    mo.seed = seed;
    const auto bf = design_hybrid(h, dims, mo);

    const double rf_mod = 1.0 / std::sqrt(16.0);
    for (Eigen::Index i = 0; i < bf.f_rf.size(); ++i)
      CHECK(std::abs(std::abs(bf.f_rf(i)) - rf_mod) < 1e-8);
    for (Eigen::Index i = 0; i < bf.w_rf.size(); ++i)
      CHECK(std::abs(std::abs(bf.w_rf(i)) - 0.5) < 1e-8);
    CHECK(bf.precoder().squaredNorm() == doctest::Approx(1.0).epsilon(1e-8));

    CHECK(spectral_efficiency(h, bf, dims) <=
          rate_with_unconstrained(h, dims) + 1e-6);
  }
}

TEST_CASE("gamma metrics: zero error and zero product") {
  const auto dims = dims_for(6, 4, 2, 2, 2);
  const CMat h = subchannel(4, 6, 37);
  const auto ub = unconstrained_beamformers(h, dims);

  HybridBeamformers exact;
  exact.f_rf = ub.f_opt;  // not feasible-modulus, but reproduces the target
  exact.f_bb = CMat::Identity(2, 2);
  exact.w_rf = ub.w_opt;
  exact.w_bb = CMat::Identity(2, 2);
  const auto g0 = gamma_metrics(ub.f_opt, ub.w_opt, exact, dims);
  CHECK(g0.gamma_f == 0.0);
  CHECK(g0.gamma_w == 0.0);

  HybridBeamformers zero = exact;
  zero.f_bb = CMat::Zero(2, 2);
  const auto gz = gamma_metrics(ub.f_opt, ub.w_opt, zero, dims);
  // ||F_opt||_F = sqrt(n_s) by orthonormality.
  CHECK(gz.gamma_f ==
        doctest::Approx(std::sqrt(2.0) / (6.0 * 2.0)).epsilon(1e-10));
}

TEST_CASE("riemannian gradient agrees with finite differences") {
  const auto dims = dims_for(8, 4, 2, 3, 2);
  const CMat target = random_complex(8, 2, 40);
  const double radius = 1.0 / std::sqrt(8.0);
  const CMat x = random_phase_matrix(8, 3, radius, 41);
  const CMat coef = random_complex(3, 2, 42);
  const CMat grad = riemannian_gradient(target, x, coef);

  auto retract = [radius](CMat m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m(i) *= radius / std::abs(m(i));
    return m;
  };
  auto obj = [&](const CMat& m) { return (target - m * coef).squaredNorm(); };

  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    // Random tangent direction: project white noise onto the tangent space.
    CMat d(8, 3);
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = rng.complex_gaussian(1.0);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double inner = (d(i) * std::conj(x(i))).real() / std::norm(x(i));
      d(i) -= inner * x(i);
    }
    const double h = 1e-6;
    const double fd =
        (obj(retract(x + h * d)) - obj(retract(x - h * d))) / (2.0 * h);
    double analytic = 0.0;  // real inner product <grad, d>
    for (Eigen::Index i = 0; i < d.size(); ++i)
      analytic += (std::conj(grad(i)) * d(i)).real();
    CHECK(fd == doctest::Approx(analytic).epsilon(1e-4));
  }
}

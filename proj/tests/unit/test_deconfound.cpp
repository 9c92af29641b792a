#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <random>

#include "gcspatial/deconfound.hpp"
#include "gcspatial/error.hpp"

using namespace gcspatial;

namespace {

Eigen::MatrixXd random_design(Eigen::Index n, Eigen::Index q, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(n, q);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
  return x;
}

LatticeMap full_lattice(std::size_t rows, std::size_t cols) {
  LatticeMap lat;
  lat.rows = rows;
  lat.cols = cols;
  for (std::size_t c = 0; c < rows * cols; ++c) lat.cell_of_region.push_back(c);
  return lat;
}

}  // namespace

TEST_CASE("RHZ basis is an orthonormal complement of the design") {
  std::mt19937_64 rng(2);
  for (Eigen::Index q : {1, 2, 4}) {
    const Eigen::MatrixXd x = with_intercept(random_design(40, q, rng));
    const auto b = rhz_basis(x);
    CHECK(b.basis.cols() == 40 - x.cols());
    CHECK((b.basis.transpose() * x).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((b.basis.transpose() * b.basis - Eigen::MatrixXd::Identity(b.basis.cols(), b.basis.cols()))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    // B B' is the residual-maker of X.
    const Eigen::MatrixXd hat = x * (x.transpose() * x).inverse() * x.transpose();
    CHECK((b.basis * b.basis.transpose() - (Eigen::MatrixXd::Identity(40, 40) - hat))
              .cwiseAbs()
              .maxCoeff() < 1e-10);
  }
}

TEST_CASE("RHZ basis errors") {
  Eigen::MatrixXd x(5, 3);
  x.col(0).setOnes();
  x.col(1) << 1, 2, 3, 4, 5;
  x.col(2) = 2.0 * x.col(1) - x.col(0);
  try {
    rhz_basis(x);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("dependent columns: 2") != std::string::npos);
  }
  CHECK_THROWS_AS(rhz_basis(Eigen::MatrixXd::Random(3, 3)), InputError);
  CHECK(rhz_basis(Eigen::MatrixXd(4, 0)).basis.isIdentity());
  CHECK(dependent_columns(x) == std::vector<Eigen::Index>{2});
}

TEST_CASE("RHZ transform on a path of three keeps the nonzero spectrum") {
  const auto p = icar_precision(RegionGraph::from_edges(3, {{0, 1}, {1, 2}}));
  const auto b = rhz_basis(Eigen::MatrixXd::Ones(3, 1));
  const Eigen::MatrixXd m = rhz_transform(p, b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  CHECK(es.eigenvalues()[0] == doctest::Approx(1.0));
  CHECK(es.eigenvalues()[1] == doctest::Approx(3.0));
  const Eigen::MatrixXd oracle = b.basis.transpose() * to_dense(p.matrix) * b.basis;
  CHECK((m - oracle).norm() < 1e-12);
}

TEST_CASE("with_intercept keeps an existing constant column") {
  Eigen::MatrixXd x(3, 2);
  x << 2, 1, 2, 5, 2, 7;
  CHECK(with_intercept(x).cols() == 2);
  Eigen::MatrixXd y(3, 1);
  y << 1, 5, 7;
  const auto w = with_intercept(y);
  CHECK(w.cols() == 2);
  CHECK(w.col(0).isOnes());
}

TEST_CASE("SPOCK centroids are orthogonal to the design and the graph keeps degrees") {
  std::mt19937_64 rng(8);
  auto g = rook_lattice_graph(9, 11);
  const Eigen::MatrixXd x = with_intercept(random_design(99, 2, rng));
  const auto proj = spock_centroids(*g.centroids, x);
  CHECK((x.transpose() * proj).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((spock_centroids(proj, x) - proj).cwiseAbs().maxCoeff() <= 1e-10);

  const auto sg = spock_graph(g, x);
  sg.validate();
  CHECK(sg.components().size() == 1);
  for (std::size_t i = 0; i < g.n; ++i) CHECK(sg.degree(i) >= g.degree(i));
  const auto raw = spock_graph(g, x, false);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (auto j : raw.neighbors[i]) {
      CHECK(std::binary_search(sg.neighbors[i].begin(), sg.neighbors[i].end(), j));
    }
  }
  CHECK_THROWS_AS(spock_graph(RegionGraph::from_edges(3, {{0, 1}, {1, 2}}), x.topRows(3)),
                  InputError);
}

TEST_CASE("SPOCK bridging joins separated clusters") {
  // Two tight clusters far apart; every region asks for a single neighbor.
  RegionGraph g = RegionGraph::from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
  Centroids c(6, 2);
  c << 0, 0, 0.1, 0, 0.2, 0.05, 10, 0, 10.1, 0.02, 10.2, 0.1;
  g.centroids = c;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 0);
  const auto raw = spock_graph(g, x, false);
  CHECK(raw.components().size() == 2);
  const auto joined = spock_graph(g, x);
  CHECK(joined.components().size() == 1);
  CHECK(joined.edge_count() == raw.edge_count() + 1);
  CHECK(std::binary_search(joined.neighbors[2].begin(), joined.neighbors[2].end(), 3));
}

TEST_CASE("beta star matches the normal equations") {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd x = random_design(30, 2, rng);
  const Eigen::VectorXd phi = random_design(30, 1, rng);
  const Eigen::Vector2d beta(0.7, -1.0);
  const Eigen::VectorXd expect = beta + (x.transpose() * x).ldlt().solve(x.transpose() * phi);
  CHECK((beta_star(beta, x, phi) - expect).norm() < 1e-12);
  CHECK((beta_star(beta, x, Eigen::VectorXd::Zero(30)) - beta).norm() == 0.0);
  CHECK_THROWS_AS(beta_star(beta, x, Eigen::VectorXd::Zero(3)), InputError);
}

TEST_CASE("deconfounding invariants hold on random instances") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nd(10, 500);
  std::uniform_int_distribution<int> qd(1, 4);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int rep = 0; rep < 25; ++rep) {
    const Eigen::Index n = nd(rng);
    const Eigen::MatrixXd x = with_intercept(random_design(n, qd(rng), rng));
    const auto b = rhz_basis(x);
    CHECK((b.basis.transpose() * x).cwiseAbs().maxCoeff() <= 1e-10);
    Centroids c(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) c.row(i) << u(rng), u(rng);
    CHECK((x.transpose() * spock_centroids(c, x)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("stage-1 smooth equals the dense penalized least-squares solution") {
  const auto lat = full_lattice(6, 6);
  const Eigen::Index n = 36;
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = static_cast<double>(lat.row_of(i));
    const double c = static_cast<double>(lat.col_of(i));
    x[i] = std::sin(r / 2.0) + 0.3 * c + 0.1 * std::cos(3.0 * i);
  }
  StageOneOptions opts;
  const double t = 1.3;
  const double rho = 2.0;
  opts.fixed_theta = std::make_pair(t, rho);
  const auto fit = spatialplus_residualize(x, lat, opts);

  // Oracle: minimize tau_n |x - F c - V u|^2 + b |c|^2 + tau_s u'V'RVu.
  const auto rw = rw2d_precision(lat);
  Eigen::MatrixXd f(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    f(i, 0) = 1.0;
    f(i, 1) = static_cast<double>(lat.row_of(i)) - 2.5;
    f(i, 2) = static_cast<double>(lat.col_of(i)) - 2.5;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(rw.constraints.transpose());
  const Eigen::MatrixXd v =
      (qr.householderQ() * Eigen::MatrixXd::Identity(n, n)).rightCols(n - 3);
  Eigen::MatrixXd a(n, n);
  a << f, v;
  const double tau_n = std::exp(t);
  const double tau_s = std::exp(t + rho);
  Eigen::MatrixXd prec = tau_n * a.transpose() * a;
  prec.topLeftCorner(3, 3) += opts.priors.beta_precision * Eigen::MatrixXd::Identity(3, 3);
  prec.bottomRightCorner(n - 3, n - 3) += tau_s * v.transpose() * to_dense(rw.matrix) * v;
  const Eigen::VectorXd coef = prec.ldlt().solve(tau_n * a.transpose() * x);
  const Eigen::VectorXd smooth = a * coef;
  CHECK((fit.smooth - smooth).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((fit.residual - (x - smooth)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(fit.tau_noise == doctest::Approx(tau_n));
  CHECK(fit.tau_smooth == doctest::Approx(tau_s));
}

TEST_CASE("stage-1 search removes a smooth trend") {
  const auto lat = full_lattice(10, 10);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 0.2);
  Eigen::VectorXd x(100);
  Eigen::VectorXd noise(100);
  for (Eigen::Index i = 0; i < 100; ++i) {
    noise[i] = z(rng);
    x[i] = 2.0 * std::sin(lat.row_of(i) / 3.0) * std::cos(lat.col_of(i) / 4.0) + noise[i];
  }
  const auto fit = spatialplus_residualize(x, lat);
  CHECK(fit.residual.squaredNorm() < 1.5 * noise.squaredNorm());
  CHECK(std::abs(fit.residual.mean()) < 1e-6);
  CHECK(std::isfinite(fit.log_posterior));
}

TEST_CASE("spatial+ design replaces only the named columns") {
  const auto lat = full_lattice(5, 5);
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd x = random_design(25, 2, rng);
  StageOneOptions opts;
  opts.fixed_theta = std::make_pair(0.0, 1.0);
  const auto d = spatialplus_design(x, {"a", "b"}, {"b"}, lat, opts);
  CHECK(d.design.col(0) == x.col(0));
  CHECK(d.design.col(1) != x.col(1));
  REQUIRE(d.fits.size() == 1);
  CHECK(d.fits[0].name == "b");
  CHECK(d.design.col(1) == d.fits[0].residual);
  CHECK_THROWS_AS(spatialplus_design(x, {"a", "b"}, {"c"}, lat, opts), InputError);
}

// Numerics layer: rng streams, parameter store, reverse-mode tape,
// finite-difference oracle, checkpoint container, stats helpers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "mrtlab/common.hpp"
#include "mrtlab/container_io.hpp"
#include "mrtlab/grad_check.hpp"
#include "mrtlab/param_store.hpp"
#include "mrtlab/rng.hpp"
#include "mrtlab/stats.hpp"
#include "mrtlab/tape.hpp"

using namespace mrtlab;

namespace {

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c,
                              double scl = 0.5) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scl * rng.normal();
  return m;
}

}  // namespace

// ---------------------------------------------------------------- rng

TEST_CASE("rng: identical seeds give identical sequences") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: named streams are independent and reproducible") {
  Rng a = Rng::stream(77, "init");
  Rng b = Rng::stream(77, "sampling");
  CHECK(a.next_u64() != b.next_u64());

  Rng a2 = Rng::stream(77, "init");
  Rng fresh = Rng::stream(77, "init");
  CHECK(a2.next_u64() == fresh.next_u64());
}

TEST_CASE("rng: fork does not advance the parent") {
  Rng parent = Rng::stream(9, "corpus");
  const std::uint64_t before = Rng(parent).next_u64();
  Rng f0 = parent.fork(0);
  Rng f1 = parent.fork(1);
  CHECK(f0.next_u64() != f1.next_u64());
  CHECK(Rng(parent).next_u64() == before);
  // fork is a pure function of (parent seed, index)
  CHECK(parent.fork(5).next_u64() == parent.fork(5).next_u64());
}

TEST_CASE("rng: uniform lies in [0,1)") {
  Rng r(42);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("rng: uniform_int honours bounds and rejects n=0") {
  Rng r(5);
  for (int i = 0; i < 10000; ++i) CHECK(r.uniform_int(7) < 7);
  CHECK(r.uniform_int(1) == 0);
  CHECK_THROWS_AS(r.uniform_int(0), ContractError);
}

TEST_CASE("rng: normal has roughly standard moments") {
  Rng r(2024);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("rng: shuffle permutes deterministically") {
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  Rng r(3);
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

  std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7};
  Rng r2(3);
  r2.shuffle(w);
  CHECK(v == w);
}

// ---------------------------------------------------------- param store

TEST_CASE("param store: add, lookup, ranks, deterministic name order") {
  ParamStore p;
  p.add("w", Eigen::MatrixXd::Ones(2, 3));
  p.add_vector("b", Eigen::VectorXd::Zero(4));
  CHECK(p.block_count() == 2);
  CHECK(p.element_count() == 10);
  CHECK(p.rank("w") == 2);
  CHECK(p.rank("b") == 1);
  CHECK(p.names() == std::vector<std::string>{"b", "w"});
  CHECK(p["w"](1, 2) == 1.0);

  CHECK_THROWS_AS(p.add("w", Eigen::MatrixXd::Zero(1, 1)), ValidationError);
  Eigen::MatrixXd bad(1, 1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(p.add("nan", bad), NumericFault);
  CHECK_THROWS_AS(p["missing"], ContractError);
}

TEST_CASE("grad bundle: zero init, add, scale") {
  ParamStore p;
  p.add("w", Eigen::MatrixXd::Ones(2, 2));
  GradBundle g(p);
  CHECK(g.at("w").isZero());

  g["w"](0, 0) = 3.0;
  GradBundle h(p);
  h["w"](0, 0) = 1.0;
  g.add(h);
  g.scale(0.5);
  CHECK(g.at("w")(0, 0) == doctest::Approx(2.0));
  CHECK(g.at("w")(1, 1) == 0.0);
}

// ----------------------------------------------------------------- tape

TEST_CASE("tape: sum of squares at [3,4] gives loss 25 and grad [6,8]") {
  ParamStore p;
  Eigen::VectorXd x(2);
  x << 3.0, 4.0;
  p.add_vector("x", x);

  Tape t(&p);
  Var loss = sum(t, square(t, t.param("x")));
  CHECK(t.scalar(loss) == doctest::Approx(25.0));
  t.backward(loss);
  GradBundle g = t.grads();
  CHECK(g.at("x")(0, 0) == doctest::Approx(6.0));
  CHECK(g.at("x")(1, 0) == doctest::Approx(8.0));
}

TEST_CASE("tape: loss independent of a block leaves its gradient zero") {
  ParamStore p;
  p.add("used", Eigen::MatrixXd::Ones(2, 1));
  p.add("unused", Eigen::MatrixXd::Ones(3, 3));

  Tape t(&p);
  Var loss = sum(t, t.param("used"));
  t.backward(loss);
  GradBundle g = t.grads();
  CHECK(g.at("used").isOnes());
  CHECK(g.at("unused").isZero());

  // constant-only loss: every block stays zero
  Tape t2(&p);
  Var c = t2.constant_scalar(17.0);
  t2.backward(c);
  GradBundle g2 = t2.grads();
  CHECK(g2.at("used").isZero());
  CHECK(g2.at("unused").isZero());
}

TEST_CASE("tape: softmax/log-softmax match frozen values and each other") {
  ParamStore p;
  Eigen::VectorXd v(2);
  v << -1.0, -2.0;
  p.add_vector("v", v);

  Tape t(&p);
  Var sm = softmax_col(t, t.param("v"));
  CHECK(t.value(sm)(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(t.value(sm)(1, 0) == doctest::Approx(0.2689414213699951).epsilon(1e-12));

  Var lsm = log_softmax_col(t, t.param("v"));
  CHECK(std::exp(t.value(lsm)(0, 0)) == doctest::Approx(t.value(sm)(0, 0)).epsilon(1e-12));

  // stability: shifting logits by a large constant leaves probabilities intact
  Tape t2(&p);
  Var shifted = softmax_col(t2, add_scalar(t2, t2.param("v"), 1000.0));
  CHECK(t2.value(shifted)(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("tape: param reuse accumulates into one leaf") {
  ParamStore p;
  p.add_vector("x", Eigen::VectorXd::Ones(2) * 2.0);
  Tape t(&p);
  Var a = t.param("x");
  Var b = t.param("x");
  CHECK(a == b);
  Var loss = add(t, sum(t, a), sum(t, b));  // d/dx (2 * sum x) = 2
  t.backward(loss);
  CHECK(t.grads().at("x")(0, 0) == doctest::Approx(2.0));
}

// One expression that routes gradient through every remaining op, validated
// against the central-difference oracle.
namespace {

Var composite_loss(Tape& t) {
  Var E = t.param("E");    // 3x5
  Var W = t.param("W");    // 4x3
  Var b = t.param("b");    // 4x1
  Var u = t.param("u");    // 4x1
  Var v2 = t.param("v2");  // 5x1

  Var x = col(t, E, 2);
  Var x2 = col(t, E, 4);
  Var h = tanh_of(t, add(t, matmul(t, W, x), b));

  std::vector<Var> hcols{h, u};
  Var hs = hstack(t, hcols);             // 4x2
  Var sq = square(t, transpose(t, hs));  // 2x4
  Var s1 = mean(t, sq);

  std::vector<Var> vparts{x, x2};
  Var vv = vstack(t, vparts);            // 6x1
  Var rr = row_range(t, vv, 1, 4);       // 4x1
  Var d = dot(t, rr, h);

  Var logits = matmul(t, transpose(t, E), x);  // 5x1
  Var pk = pick(t, log_softmax_col(t, logits), 3);
  Var d2 = dot(t, v2, softmax_col(t, logits));

  Var s3 = sum(t, mul(t, x, x2));
  Var s4 = sum(t, sub(t, x, x2));

  std::vector<Var> scalars{s1, d, pk, d2, s3, s4};
  Var stacked = stack_scalars(t, scalars);
  Eigen::VectorXd wts(6);
  wts << 0.9, -0.4, 0.25, 1.1, -0.7, 0.5;
  Var mixed = dot(t, stacked, t.constant(wts));

  std::vector<Var> ws_in{s1, d, pk};
  const double ws_w[3] = {0.4, -0.3, 1.2};
  Var wsum = weighted_sum(t, ws_in, std::span<const double>(ws_w, 3));

  return add_scalar(t, scale(t, add(t, mixed, wsum), 0.9), 0.1);
}

}  // namespace

TEST_CASE("tape: composite expression matches finite differences") {
  Rng rng = Rng::stream(11, "init");
  ParamStore p;
  p.add("E", random_matrix(rng, 3, 5));
  p.add("W", random_matrix(rng, 4, 3));
  p.add("b", random_matrix(rng, 4, 1), 1);
  p.add("u", random_matrix(rng, 4, 1), 1);
  p.add("v2", random_matrix(rng, 5, 1), 1);

  Tape t(&p);
  Var loss = composite_loss(t);
  t.backward(loss);

  LossFn f = [](const ParamStore& q) {
    Tape tt(&q);
    return tt.scalar(composite_loss(tt));
  };
  CheckReport rep = grad_check(f, t.grads(), p, 1e-6);
  INFO("worst block ", rep.worst_block, " rel ", rep.max_rel_error);
  CHECK(rep.pass);
}

TEST_CASE("tape: relu gradient is exact away from the kink") {
  ParamStore p;
  Eigen::VectorXd x(4);
  x << 1.0, -2.0, 3.0, -0.5;
  p.add_vector("x", x);
  Eigen::VectorXd w(4);
  w << 0.3, 0.7, -0.2, 0.5;

  auto build = [&w](Tape& t) {
    return sum(t, mul(t, relu(t, t.param("x")), t.constant(w)));
  };
  Tape t(&p);
  Var loss = build(t);
  t.backward(loss);
  GradBundle g = t.grads();
  CHECK(g.at("x")(0, 0) == doctest::Approx(0.3));
  CHECK(g.at("x")(1, 0) == 0.0);
  CHECK(g.at("x")(2, 0) == doctest::Approx(-0.2));
  CHECK(g.at("x")(3, 0) == 0.0);

  LossFn f = [&build](const ParamStore& q) {
    Tape tt(&q);
    return tt.scalar(build(tt));
  };
  CHECK(grad_check(f, g, p, 1e-8).pass);
}

TEST_CASE("tape: weighted_sum equals the unrolled expression") {
  ParamStore p;
  Eigen::VectorXd x(3);
  x << 0.5, -1.5, 2.0;
  p.add_vector("x", x);
  const double w[3] = {0.25, -0.5, 1.5};

  Tape t(&p);
  Var xs = t.param("x");
  std::vector<Var> parts{pick(t, xs, 0), pick(t, xs, 1), pick(t, xs, 2)};
  Var ws = weighted_sum(t, parts, std::span<const double>(w, 3));
  CHECK(t.scalar(ws) ==
        doctest::Approx(0.25 * 0.5 - 0.5 * -1.5 + 1.5 * 2.0).epsilon(1e-12));
  t.backward(ws);
  GradBundle g = t.grads();
  for (int i = 0; i < 3; ++i) CHECK(g.at("x")(i, 0) == doctest::Approx(w[i]));
}

TEST_CASE("tape: backward rejects non-scalar and non-finite losses") {
  ParamStore p;
  p.add_vector("x", Eigen::VectorXd::Ones(2));

  Tape t(&p);
  CHECK_THROWS_AS(t.backward(t.param("x")), ContractError);

  Tape t2(&p);
  Eigen::VectorXd inf_v = Eigen::VectorXd::Constant(2, std::numeric_limits<double>::infinity());
  Var bad = sum(t2, mul(t2, t2.param("x"), t2.constant(inf_v)));
  CHECK_THROWS_AS(t2.backward(bad), NumericFault);
}

TEST_CASE("tape: overflowing gradient faults with the block name") {
  ParamStore p;
  Eigen::VectorXd x(2);
  x << 1.0, -1.0;
  p.add_vector("edge_weights", x);

  // forward stays exactly 0 on both paths; backward accumulates 2 * 1.5e308
  Tape t(&p);
  const double big = 1.5e308;
  Var loss = add(t, sum(t, scale(t, t.param("edge_weights"), big)),
                 sum(t, scale(t, t.param("edge_weights"), big)));
  CHECK(t.scalar(loss) == 0.0);
  try {
    t.backward(loss);
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(std::string(e.what()).find("edge_weights") != std::string::npos);
  }
}

TEST_CASE("tape: identical runs produce bit-identical gradients") {
  Rng rng = Rng::stream(100, "init");
  ParamStore p;
  p.add("E", random_matrix(rng, 3, 5));
  p.add("W", random_matrix(rng, 4, 3));
  p.add("b", random_matrix(rng, 4, 1), 1);
  p.add("u", random_matrix(rng, 4, 1), 1);
  p.add("v2", random_matrix(rng, 5, 1), 1);

  auto run = [&p]() {
    Tape t(&p);
    Var loss = composite_loss(t);
    t.backward(loss);
    return t.grads();
  };
  GradBundle g1 = run();
  GradBundle g2 = run();
  for (const auto& [name, m] : g1.blocks()) {
    CHECK(std::memcmp(m.data(), g2.at(name).data(),
                      sizeof(double) * static_cast<std::size_t>(m.size())) == 0);
  }
}

// ----------------------------------------------------------- grad check

TEST_CASE("grad check: quadratic loss passes at 1e-6") {
  ParamStore p;
  Eigen::MatrixXd w(2, 2);
  w << 0.3, -1.2, 2.0, 0.7;
  p.add("w", w);

  LossFn f = [](const ParamStore& q) { return q["w"].squaredNorm(); };
  GradBundle analytic(p);
  analytic["w"] = 2.0 * w;

  CheckReport rep = grad_check(f, analytic, p, 1e-6);
  CHECK(rep.pass);
  CHECK(rep.max_rel_error <= 1e-6);
}

TEST_CASE("grad check: doubled analytic gradient reports rel error 1/3") {
  ParamStore p;
  Eigen::MatrixXd w(2, 2);
  w << 0.3, -1.2, 2.0, 0.7;
  p.add("w", w);

  LossFn f = [](const ParamStore& q) { return q["w"].squaredNorm(); };
  GradBundle doubled(p);
  doubled["w"] = 4.0 * w;  // 2x the true gradient

  CheckReport rep = grad_check(f, doubled, p, 1e-6);
  CHECK_FALSE(rep.pass);
  // |2g - g| / (|2g| + |g|) = 1/3 for every element
  CHECK(rep.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("grad check: nondeterministic loss invalidates the oracle") {
  ParamStore p;
  p.add("w", Eigen::MatrixXd::Ones(1, 1));
  int calls = 0;
  LossFn f = [&calls](const ParamStore&) { return static_cast<double>(calls++); };
  CHECK_THROWS_AS(finite_diff_grad(f, p, 1e-5), ValidationError);
}

TEST_CASE("grad check: tolerance must sit in (0,1)") {
  ParamStore p;
  p.add("w", Eigen::MatrixXd::Ones(1, 1));
  LossFn f = [](const ParamStore& q) { return q["w"].sum(); };
  GradBundle g(p);
  g["w"](0, 0) = 1.0;
  CHECK_THROWS_AS(grad_check(f, g, p, 0.0), ContractError);
  CHECK_THROWS_AS(grad_check(f, g, p, 1.5), ContractError);
}

// ------------------------------------------------------------ container

TEST_CASE("container: round trip is bit exact and preserves ranks") {
  Rng rng = Rng::stream(55, "init");
  ParamStore p;
  p.add("enc.W", random_matrix(rng, 4, 7));
  p.add("dec.b", random_matrix(rng, 5, 1), 1);
  p.add("emb", random_matrix(rng, 3, 9));

  const std::string path = temp_path("mrtlab_roundtrip.mrtl");
  save_params(p, path);
  ParamStore q = load_params(path);

  CHECK(q.block_count() == p.block_count());
  CHECK(q.names() == p.names());
  for (const auto& name : p.names()) {
    CHECK(q.rank(name) == p.rank(name));
    const auto& a = p[name];
    const auto& b = q[name];
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    CHECK(std::memcmp(a.data(), b.data(),
                      sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("container: corruption, truncation, bad magic, missing file") {
  ParamStore p;
  p.add("w", Eigen::MatrixXd::Ones(3, 3) * 0.25);
  const std::string path = temp_path("mrtlab_corrupt.mrtl");
  save_params(p, path);

  auto read_all = [&path]() {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  };
  auto write_all = [&path](const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };

  const std::vector<char> good = read_all();

  // flip one payload byte -> checksum mismatch
  std::vector<char> bad = good;
  bad[good.size() / 2] ^= 0x40;
  write_all(bad);
  CHECK_THROWS_AS(load_params(path), NumericFault);

  // chop to a stub -> structural failure
  write_all(std::vector<char>(good.begin(), good.begin() + 6));
  CHECK_THROWS_AS(load_params(path), ParseError);

  // damage the magic
  bad = good;
  bad[0] = 'X';
  write_all(bad);
  CHECK_THROWS_AS(load_params(path), ParseError);

  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_params(path), MissingArtifact);
}

namespace {

void put_u32(std::vector<char>& b, std::uint32_t v) {
  const char* p = reinterpret_cast<const char*>(&v);
  b.insert(b.end(), p, p + 4);
}
void put_u64(std::vector<char>& b, std::uint64_t v) {
  const char* p = reinterpret_cast<const char*>(&v);
  b.insert(b.end(), p, p + 8);
}
void put_f64(std::vector<char>& b, double v) {
  const char* p = reinterpret_cast<const char*>(&v);
  b.insert(b.end(), p, p + 8);
}

// Assemble magic | version | body | crc32(body) by hand.
void write_crafted(const std::string& path, const std::vector<char>& body) {
  std::vector<char> file;
  file.insert(file.end(), {'M', 'R', 'T', 'L'});
  put_u32(file, 1);
  file.insert(file.end(), body.begin(), body.end());
  put_u32(file, crc32(body.data(), body.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(file.data(), static_cast<std::streamsize>(file.size()));
}

}  // namespace

TEST_CASE("container: crafted files with valid checksums still validate") {
  const std::string path = temp_path("mrtlab_crafted.mrtl");

  // name length pointing past the end of the body
  std::vector<char> body;
  put_u64(body, 1);                      // one block
  put_u64(body, 1'000'000);              // absurd name length
  write_crafted(path, body);
  CHECK_THROWS_AS(load_params(path), ParseError);

  // NaN payload behind a correct checksum
  body.clear();
  put_u64(body, 1);
  put_u64(body, 1);
  body.push_back('w');
  put_u64(body, 1);  // rank 1
  put_u64(body, 1);  // one row
  put_f64(body, std::numeric_limits<double>::quiet_NaN());
  write_crafted(path, body);
  CHECK_THROWS_AS(load_params(path), NumericFault);

  std::filesystem::remove(path);
}

// ---------------------------------------------------------------- stats

TEST_CASE("stats: pearson matches the frozen reference") {
  const std::vector<double> x{1.0, 2.0, 3.0};
  const std::vector<double> y{2.0, 4.0, 7.0};
  CHECK(pearson(x, y) == doctest::Approx(0.9933992677987828).epsilon(1e-12));

  CHECK_THROWS_AS(pearson({1.0, 2.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(pearson({1.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(pearson({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), ValidationError);
}

TEST_CASE("stats: p-values match the frozen references") {
  const double r = pearson({1.0, 2.0, 3.0}, {2.0, 4.0, 7.0});
  CHECK(pearson_p_value(r, 3) == doctest::Approx(0.0731863950403274).epsilon(1e-8));
  CHECK(pearson_p_value(0.5, 12) == doctest::Approx(0.09785461425781246).epsilon(1e-9));
  CHECK(pearson_p_value(1.0, 10) == 0.0);
  CHECK_THROWS_AS(pearson_p_value(0.5, 2), ValidationError);
}

TEST_CASE("stats: chi-squared survival function") {
  CHECK(chi2_sf(0.0, 5.0) == 1.0);
  CHECK(chi2_sf(3.84, 1.0) == doctest::Approx(0.05004352124870519).epsilon(1e-10));
  CHECK(chi2_sf(10.5, 4.0) == doctest::Approx(0.03279698999488366).epsilon(1e-10));
  CHECK_THROWS_AS(chi2_sf(-1.0, 2.0), ValidationError);
}

TEST_CASE("stats: incomplete beta and gamma identities") {
  CHECK(incomplete_beta(2.5, 3.5, 0.4) ==
        doctest::Approx(0.4869041915261176).epsilon(1e-10));
  CHECK(gamma_p(4.5, 3.0) == doctest::Approx(0.26008170790534624).epsilon(1e-10));

  // complements
  Rng rng(808);
  for (int i = 0; i < 20; ++i) {
    const double a = 0.5 + 4.0 * rng.uniform();
    const double b = 0.5 + 4.0 * rng.uniform();
    const double x = rng.uniform();
    CHECK(incomplete_beta(a, b, x) + incomplete_beta(b, a, 1.0 - x) ==
          doctest::Approx(1.0).epsilon(1e-10));
    CHECK(gamma_p(a, x * 8.0) + gamma_q(a, x * 8.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  // gamma_p(1, x) is the exponential CDF
  for (double x : {0.1, 0.5, 1.0, 2.5, 7.0}) {
    CHECK(gamma_p(1.0, x) == doctest::Approx(1.0 - std::exp(-x)).epsilon(1e-12));
  }
}

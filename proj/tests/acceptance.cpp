// Acceptance suite: runs every pinned criterion end to end and prints one
// pass/fail line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "kronquant/curvature.hpp"
#include "kronquant/experiment.hpp"
#include "kronquant/oracle.hpp"
#include "kronquant/pipeline.hpp"
#include "kronquant/refine.hpp"

using namespace kronquant;

namespace {

int failures = 0;

void report(int idx, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s %2d: %s (%s)\n", pass ? "PASS" : "FAIL", idx, what.c_str(), detail.c_str());
  if (!pass) ++failures;
}

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::stringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (!have_header) {
      t.header = cols;
      have_header = true;
    } else {
      t.rows.push_back(cols);
    }
  }
  return t;
}

std::string strip_volatile(const std::string& csv, int drop_column) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    if (drop_column >= 0) {
      std::stringstream ls(line);
      std::string col, rebuilt;
      int idx = 0;
      while (std::getline(ls, col, ',')) rebuilt += (idx++ == drop_column ? "_" : col) + ",";
      line = rebuilt;
    }
    out += line + "\n";
  }
  return out;
}

// ---- criterion 1: joint update closed form vs the assembled KKT system ----
void criterion_1() {
  const double t0 = now_seconds();
  double max_resid = 0.0;
  int instances = 0;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    std::uint64_t combo = 0;
    for (std::size_t d_out : {4, 8, 16}) {
      for (std::size_t n : {1, 2, 4}) {
        for (std::size_t d_in : {4, 8}) {
          Rng rng(derive_seed(seed, ++combo + 5000));
          const Matrix h_out = random_spd(rng, d_out);
          const Matrix h_in = random_spd(rng, d_in);
          const Matrix w = random_matrix(rng, n, d_in);
          const Matrix q = w + random_matrix(rng, n, d_in, 0.4);
          const Matrix closed = joint_compensate(w, q, chol_inv_upper(h_out), BlockIndex{0, n});
          const KktSolution sol = kkt_solve({h_out, h_in, BlockIndex{0, n}, q - w, Matrix()});
          if (d_out > n)
            max_resid = std::max(
                max_resid, rel_frob_diff(closed, sol.delta_w.block(n, 0, d_out - n, d_in)));
          ++instances;
        }
      }
    }
  }
  const double elapsed = now_seconds() - t0;
  report(1, instances >= 200 && max_resid < 1e-8 && elapsed < 30.0,
         "joint-compensation closed form matches the kkt oracle",
         std::to_string(instances) + " instances, max rel resid " + fmt(max_resid) + ", " +
             fmt(elapsed) + " s");
}

// ---- criterion 2: residual update vs KKT, and exact reduction at zero ----
void criterion_2() {
  double max_resid = 0.0;
  bool bit_reduction = true;
  int instances = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    std::uint64_t combo = 0;
    for (std::size_t d_out : {4, 8, 16}) {
      for (std::size_t n : {1, 2, 4}) {
        for (std::size_t d_in : {4, 8}) {
          for (double alpha : {0.05, 0.125, 0.25}) {
            Rng rng(derive_seed(seed, ++combo + 6000));
            const std::size_t len = d_in + 3;
            const Matrix h_out = random_spd(rng, d_out);
            const Matrix u_out = chol_inv_upper(h_out);
            const Matrix x = random_matrix(rng, d_in, len);
            const Matrix dx = random_matrix(rng, d_in, len, 0.5);
            const Matrix h_in = dampen(symmetrized(x * x.transposed()), 0.01);
            ResidualInfo res;
            res.alpha = alpha;
            res.r = alpha * (dx * x.transposed());
            res.h_in_chol = cholesky_lower(h_in);
            const Matrix w = random_matrix(rng, n, d_in);
            const Matrix q = w + random_matrix(rng, n, d_in, 0.4);
            const Matrix closed =
                joint_compensate_residual(w, q, u_out, BlockIndex{0, n}, res);
            const Matrix lin = kkt_linear_term(h_out, BlockIndex{0, n}, w, res.r);
            const KktSolution sol = kkt_solve({h_out, h_in, BlockIndex{0, n}, q - w, lin});
            if (d_out > n)
              max_resid = std::max(
                  max_resid, rel_frob_diff(closed, sol.delta_w.block(n, 0, d_out - n, d_in)));
            const Matrix zero_path = joint_compensate_residual(
                w, q, u_out, BlockIndex{0, n}, ResidualInfo::none(d_in));
            const Matrix plain = joint_compensate(w, q, u_out, BlockIndex{0, n});
            bit_reduction = bit_reduction && bit_equal(zero_path, plain);
            ++instances;
          }
        }
      }
    }
  }
  report(2, max_resid < 1e-8 && bit_reduction,
         "residual-compensation closed form matches the kkt oracle",
         std::to_string(instances) + " instances, max rel resid " + fmt(max_resid) +
             ", zero-deviation reduction " + (bit_reduction ? "bit-exact" : "BROKEN"));
}

// ---- criterion 3: CD step optimality and objective monotonicity ----
void criterion_3() {
  double max_step_err = 0.0;
  double worst_increase = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(derive_seed(seed, 7000));
    const std::size_t d_out = 3 + static_cast<std::size_t>(rng.uniform_int(0, 3));
    const std::size_t d_in = 4 + static_cast<std::size_t>(rng.uniform_int(0, 3));
    const std::size_t len = d_in + 4;
    const Matrix x = random_matrix(rng, d_in, len);
    const Matrix dx = random_matrix(rng, d_in, len, 0.4);
    const Matrix g = random_matrix(rng, d_out + 2, d_out);
    RefineState st;
    st.w = random_matrix(rng, d_out, d_in);
    st.h_in = symmetrized(x * x.transposed());
    st.h_out = symmetrized(g.transposed() * g);
    st.r = dx * x.transposed();
    QuantGrid grid = QuantGrid::uniform(d_out, 3, RangeMode::signed_symmetric);
    for (std::size_t r = 0; r < d_out; ++r) {
      double amax = 0.0;
      for (std::size_t c = 0; c < d_in; ++c) amax = std::max(amax, std::fabs(st.w(r, c)));
      grid.scales[r] = std::max(amax, 0.25) / 3.0;
    }
    const RoundResult rounded = round_to_grid(st.w, grid);
    st.w_int = rounded.codes;
    st.q = rounded.dequant;
    st.grid = grid;

    auto explicit_obj = [&](const std::vector<double>& scales) {
      Matrix q(d_out, d_in);
      for (std::size_t r = 0; r < d_out; ++r)
        for (std::size_t c = 0; c < d_in; ++c)
          q(r, c) = scales[r] * static_cast<double>(st.w_int(r, c));
      const Matrix resid = g * ((q - st.w) * x) + g * (st.w * dx);
      const double nn = resid.frob_norm();
      return nn * nn;
    };
    for (std::size_t j = 0; j < d_out; ++j) {
      RefineState probe = st;
      const double stepped = cd_scale_step(probe, j);
      const double s0 = st.grid.scales[j];
      const double h = 0.25 * (1.0 + std::fabs(s0));
      std::vector<double> scales = st.grid.scales;
      scales[j] = s0 - h;
      const double fm = explicit_obj(scales);
      scales[j] = s0;
      const double fc = explicit_obj(scales);
      scales[j] = s0 + h;
      const double fp = explicit_obj(scales);
      const double denom = fm - 2.0 * fc + fp;
      if (!(denom > 0.0)) continue;
      const double fitted = s0 + 0.5 * h * (fm - fp) / denom;
      max_step_err =
          std::max(max_step_err, std::fabs(stepped - fitted) / (1.0 + std::fabs(fitted)));
    }
    double obj = refine_objective(st);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < d_out; ++j) {
        cd_scale_step(st, j);
        const double next = refine_objective(st);
        worst_increase = std::max(worst_increase, (next - obj) / (1.0 + std::fabs(obj)));
        obj = next;
      }
    }
  }
  report(3, max_step_err < 1e-6 && worst_increase < 1e-9,
         "cd scale step is 1-d optimal and the objective never increases",
         "max step err " + fmt(max_step_err) + ", worst increase " + fmt(worst_increase));
}

// ---- criterion 4: triangular-factor identity of the block update ----
void criterion_4() {
  double max_resid = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(derive_seed(seed, 8000));
    const std::size_t d_out = 4 + static_cast<std::size_t>(rng.uniform_int(0, 12));
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 2));
    const Matrix h = random_spd(rng, d_out);
    const Matrix u = chol_inv_upper(h);
    const Matrix hinv = symmetrized(solve_spd_chol(cholesky_lower(h), Matrix::identity(d_out)));
    const std::size_t rem = d_out - n;
    const Matrix lhs =
        hinv.block(n, 0, rem, n) * solve_dense(hinv.block(0, 0, n, n), Matrix::identity(n));
    Matrix ut_after(rem, n), ut_diag(n, n);
    for (std::size_t i = 0; i < rem; ++i)
      for (std::size_t k = 0; k < n; ++k) ut_after(i, k) = u(k, n + i);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k <= i; ++k) ut_diag(i, k) = u(k, i);
    const Matrix rhs = ut_after * solve_dense(ut_diag, Matrix::identity(n));
    max_resid = std::max(max_resid, rel_frob_diff(rhs, lhs));
  }
  report(4, max_resid < 1e-8, "cholesky form equals the inverse form of the update",
         "100 factors, max rel resid " + fmt(max_resid));
}

// ---- criterion 5: exact reductions to the independent-channel rules ----
void criterion_5() {
  Rng rng(9000);
  bool zero_update = true;
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix w = random_matrix(rng, 2, 5);
    const Matrix q = w + random_matrix(rng, 2, 5, 0.4);
    const Matrix dw = joint_compensate(w, q, Matrix::identity(7), BlockIndex{0, 2});
    zero_update = zero_update && dw.max_abs() == 0.0;
  }
  bool bit_reduction = true;
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix w = random_matrix(rng, 4, 6);
    const Matrix u = chol_inv_upper(random_spd(rng, 6));
    QuantGrid g = QuantGrid::uniform(4, 2, RangeMode::signed_symmetric);
    for (std::size_t r = 0; r < 4; ++r) {
      double amax = 0.0;
      for (std::size_t c = 0; c < 6; ++c) amax = std::max(amax, std::fabs(w(r, c)));
      g.scales[r] = std::max(amax, 1e-3);
    }
    const InnerQuantResult a = gptaq_quantize(w, u, Matrix(6, 6), g);
    const InnerQuantResult b = gptq_quantize(w, u, g);
    bit_reduction = bit_reduction && a.w_int == b.w_int && bit_equal(a.q, b.q);
  }
  report(5, zero_update && bit_reduction,
         "identity curvature gives zero update; zero deviation reduces bit-exactly",
         std::string("zero update ") + (zero_update ? "exact" : "BROKEN") + ", reduction " +
             (bit_reduction ? "bit-exact" : "BROKEN"));
}

// ---- criterion 6: sequential step arithmetic and block-loop timing ----
void criterion_6() {
  ExperimentConfig cfg;
  cfg.d = 128;
  cfg.d_h = 128;
  cfg.heads = 1;
  cfg.seq_len = 192;
  cfg.blocks = 1;
  cfg.outlier_channels = 4;
  cfg.seeds = {1};
  cfg.n_list = {1, 4, 8, 16, 32, 64};
  cfg.pipe.bits = 2;
  cfg.pipe.f2_residual = false;
  cfg.pipe.f3_grid = false;
  cfg.pipe.cd_iters = 0;
  std::stringstream os;
  cmd_ablate_n(cfg, os);
  const CsvTable table = parse_csv(os.str());

  const std::map<int, int> expected = {{1, 128}, {4, 32}, {8, 16}, {16, 8}, {32, 4}, {64, 2}};
  bool steps_ok = table.rows.size() == 6;
  std::map<int, double> times;
  for (const auto& row : table.rows) {
    const int n = std::stoi(row[1]);
    const int steps = std::stoi(row[2]);
    steps_ok = steps_ok && expected.count(n) && expected.at(n) == steps;
    times[n] = std::stod(row[3]);
  }
  const bool time_ok = times[1] > times[4] && times[4] > times[8] && times[8] > times[16];
  std::string detail = "steps ";
  for (const auto& row : table.rows) detail += row[2] + " ";
  detail += "| time_ms ";
  for (int n : {1, 4, 8, 16}) detail += fmt(times[n]) + " ";
  report(6, steps_ok && time_ok, "step counts are exact and the block loop speeds up to n=16",
         detail);
}

// ---- criterion 7: feature-flag ablation ordering over 20 seeds ----
void criterion_7() {
  const double t0 = now_seconds();
  ExperimentConfig cfg;  // defaults: d=32, d_h=8, heads=2, L=64, 2 blocks, b=2
  std::stringstream os;
  cmd_ablate_features(cfg, os);
  const CsvTable table = parse_csv(os.str());
  std::map<std::string, double> mean;
  std::map<std::string, std::map<int, double>> per_seed;
  for (const auto& row : table.rows) {
    const double loss = std::stod(row[3]);
    mean[row[1]] += loss;
    per_seed[row[1]][std::stoi(row[0])] = loss;
  }
  for (auto& kv : mean) kv.second /= static_cast<double>(per_seed[kv.first].size());
  int wins = 0, total = 0;
  for (const auto& kv : per_seed["f2f3"]) {
    ++total;
    if (kv.second < per_seed["base"][kv.first]) ++wins;
  }
  const double win_rate = static_cast<double>(wins) / std::max(total, 1);
  const double elapsed = now_seconds() - t0;
  const bool ok = mean["f2f3"] < mean["base"] && mean["f2"] < mean["base"] &&
                  mean["f3"] < mean["base"] && win_rate >= 0.70 && elapsed < 300.0;
  report(7, ok, "feature ablation: both features help, together most",
         "mean base " + fmt(mean["base"]) + ", f2 " + fmt(mean["f2"]) + ", f3 " +
             fmt(mean["f3"]) + ", f2f3 " + fmt(mean["f2f3"]) + ", win rate " + fmt(win_rate) +
             ", " + fmt(elapsed) + " s");
}

// ---- criterion 8: diminishing returns of refinement sweeps ----
void criterion_8() {
  ExperimentConfig cfg;
  cfg.blocks = 1;
  std::stringstream os;
  cmd_ablate_cd(cfg, os);
  const CsvTable table = parse_csv(os.str());
  std::map<int, double> mean;
  std::map<int, int> count;
  for (const auto& row : table.rows) {
    const int it = std::stoi(row[1]);
    mean[it] += std::stod(row[2]);
    count[it] += 1;
  }
  for (auto& kv : mean) kv.second /= static_cast<double>(count[kv.first]);
  const double drop01 = mean[0] - mean[1];
  const double drop12 = mean[1] - mean[2];
  const bool ok = drop01 >= 5.0 * drop12 && drop01 >= 0.0 && drop12 >= -1e-12;
  report(8, ok, "first refinement sweep takes at least 5x the second sweep's drop",
         "mean loss " + fmt(mean[0]) + " -> " + fmt(mean[1]) + " -> " + fmt(mean[2]));
}

// ---- criterion 9: explicit losses equal the curvature trace forms ----
void criterion_9() {
  double max_resid = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t d = 16, d_h = 4, len = 24;
    const AttnBlock blk = AttnBlock::random(derive_seed(seed, 9100), d, d_h, 2);
    const Matrix x = gen_calibration(derive_seed(seed, 9200), d, len, 2, 6.0);
    const ForwardResult fwd = forward_attention(blk, x);
    Rng rng(derive_seed(seed, 9300));
    for (std::size_t h = 0; h < 2; ++h) {
      const Matrix dw = random_matrix(rng, d_h, d, 0.3);
      {
        const KronHessian hess = build_hessian_query(x, fwd.heads[h].k);
        const double direct = attention_recon_error(fwd.heads[h].k, dw, x);
        const double traced = trace_product(hess.h_out * dw, hess.h_in * dw.transposed());
        max_resid = std::max(max_resid, std::fabs(direct - traced) / (1.0 + direct));
      }
      {
        const KronHessian hess = build_hessian_key(x, fwd.heads[h].q);
        const double direct = attention_recon_error(fwd.heads[h].q, dw, x);
        const double traced = trace_product(hess.h_out * dw, hess.h_in * dw.transposed());
        max_resid = std::max(max_resid, std::fabs(direct - traced) / (1.0 + direct));
      }
      {
        const Matrix w_out_h = blk.w_out_head(h);
        const KronHessian hess = build_hessian_value(x, fwd.heads[h].a, w_out_h);
        const double direct =
            attention_recon_error(w_out_h, dw, x * fwd.heads[h].a.transposed());
        const double traced = trace_product(hess.h_out * dw, hess.h_in * dw.transposed());
        max_resid = std::max(max_resid, std::fabs(direct - traced) / (1.0 + direct));
      }
    }
  }
  report(9, max_resid < 1e-8, "per-layer losses equal the curvature trace forms",
         "max rel resid " + fmt(max_resid));
}

// ---- criterion 10: byte-identical reruns modulo timing and timestamps ----
void criterion_10() {
  ExperimentConfig cfg;
  cfg.seeds = {1, 2, 3};
  std::stringstream a1, a2, f1, f2;
  cmd_ablate_n(cfg, a1);
  cmd_ablate_n(cfg, a2);
  cmd_ablate_features(cfg, f1);
  cmd_ablate_features(cfg, f2);
  const bool ok = strip_volatile(a1.str(), 3) == strip_volatile(a2.str(), 3) &&
                  strip_volatile(f1.str(), -1) == strip_volatile(f2.str(), -1);
  report(10, ok, "reruns are byte-identical modulo timing columns and timestamps",
         ok ? "block-size and feature sweeps match" : "MISMATCH");
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  if (failures == 0)
    std::printf("all acceptance criteria passed\n");
  else
    std::printf("%d acceptance criteria FAILED\n", failures);
  return failures;
}

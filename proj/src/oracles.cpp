#include "mmfuse/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mmfuse {

namespace {

// Merge adjacent repeats, then drop blanks (index 0).
std::vector<int> collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != 0) out.push_back(s);
    prev = s;
  }
  return out;
}

}  // namespace

double ctc_bruteforce(const Matrix& probs, const std::vector<int>& target) {
  const int T = static_cast<int>(probs.rows());
  const int V = static_cast<int>(probs.cols());
  if (target.empty()) throw InfeasibleError("ctc oracle: empty target");
  for (int s : target)
    if (s <= 0 || s >= V) throw VocabError("ctc oracle: target symbol outside vocabulary");

  double combos = 1.0;
  for (int t = 0; t < T; ++t) {
    combos *= V;
    if (combos > 1e6) throw OracleSizeError("ctc oracle: V^T exceeds the enumeration bound");
  }

  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = 0.0;
  while (true) {
    if (collapse(path) == target) {
      double p = 1.0;
      for (int t = 0; t < T; ++t) p *= probs(t, path[static_cast<std::size_t>(t)]);
      total += p;
    }
    // Odometer increment over the V^T grid.
    int pos = T - 1;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == V - 1) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  if (total <= 0.0) throw InfeasibleError("ctc oracle: no alignment collapses to the target");
  return -std::log(total);
}

double scl_bruteforce(const Matrix& reps, const std::vector<int>& labels, const LossConfig& cfg) {
  const int n = static_cast<int>(reps.rows());
  const int d = static_cast<int>(reps.cols());
  if (n < 2) throw ConfigError("scl oracle: batch of at least 2 required");

  // Own normalization loop, no shared helpers.
  std::vector<std::vector<double>> z(static_cast<std::size_t>(n),
                                     std::vector<double>(static_cast<std::size_t>(d)));
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int j = 0; j < d; ++j) norm += reps(i, j) * reps(i, j);
    norm = std::sqrt(norm);
    for (int j = 0; j < d; ++j)
      z[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          cfg.normalize_reps ? reps(i, j) / std::max(norm, 1e-12) : reps(i, j);
  }

  double loss_sum = 0.0;
  int anchors = 0;
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int k = 0; k < n; ++k) {
      if (cfg.exclude_self && k == i) continue;
      double sim = 0.0;
      for (int j = 0; j < d; ++j)
        sim += z[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
               z[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
      denom += std::exp(sim / cfg.tau);
    }
    double anchor_loss = 0.0;
    int positives = 0;
    for (int p = 0; p < n; ++p) {
      if (cfg.exclude_self && p == i) continue;
      if (labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(i)]) continue;
      double sim = 0.0;
      for (int j = 0; j < d; ++j)
        sim += z[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
               z[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)];
      anchor_loss += -(sim / cfg.tau - std::log(denom));
      ++positives;
    }
    if (positives > 0) {
      loss_sum += anchor_loss / positives;
      ++anchors;
    }
  }
  return anchors == 0 ? 0.0 : loss_sum / anchors;
}

double acl_bruteforce(const Matrix& reps, const Matrix& reps_aug, const LossConfig& cfg) {
  const int n = static_cast<int>(reps.rows());
  const int d = static_cast<int>(reps.cols());
  if (reps_aug.rows() != n || reps_aug.cols() != d) throw ShapeError("acl oracle: row mismatch");

  auto element = [&](const Matrix& m, int row, int col) {
    if (!cfg.normalize_reps) return m(row, col);
    double norm = 0.0;
    for (int j = 0; j < d; ++j) norm += m(row, j) * m(row, j);
    return m(row, col) / std::max(std::sqrt(norm), 1e-12);
  };

  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    double diag = 0.0;
    for (int k = 0; k < n; ++k) {
      double sim = 0.0;
      for (int j = 0; j < d; ++j) sim += element(reps, i, j) * element(reps_aug, k, j);
      denom += std::exp(sim / cfg.tau);
      if (k == i) diag = sim / cfg.tau;
    }
    loss += -(diag - std::log(denom));
  }
  return loss / n;
}

// --- finite differences -------------------------------------------------------

bool GradCheckReport::passed() const {
  for (const auto& e : entries)
    if (e.max_rel_error >= tolerance) return false;
  return true;
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::string GradCheckReport::worst_tensor() const {
  const GradCheckEntry* worst = nullptr;
  for (const auto& e : entries)
    if (!worst || e.max_rel_error > worst->max_rel_error) worst = &e;
  return worst ? worst->name : "";
}

GradCheckReport finite_diff_check(const std::function<double()>& f, const std::vector<Param*>& params,
                                  double step, double tolerance, int max_coords_per_tensor,
                                  std::uint64_t sample_seed) {
  GradCheckReport report;
  report.step = step;
  report.tolerance = tolerance;

  for (Param* p : params) p->zero_grad();
  const double base = f();
  if (!std::isfinite(base)) throw NumericError("finite_diff_check: base evaluation is not finite");
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->g);

  std::mt19937_64 rng(sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    GradCheckEntry entry;
    entry.name = p->name;

    std::vector<std::pair<int, int>> coords;
    for (int i = 0; i < p->v.rows(); ++i)
      for (int j = 0; j < p->v.cols(); ++j) coords.emplace_back(i, j);
    if (max_coords_per_tensor > 0 && static_cast<int>(coords.size()) > max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords_per_tensor));
    }

    for (const auto& [i, j] : coords) {
      const double keep = p->v(i, j);
      for (Param* q : params) q->zero_grad();
      p->v(i, j) = keep + step;
      const double up = f();
      for (Param* q : params) q->zero_grad();
      p->v(i, j) = keep - step;
      const double dn = f();
      p->v(i, j) = keep;
      if (!std::isfinite(up) || !std::isfinite(dn))
        throw NumericError("finite_diff_check: non-finite evaluation at " + p->name + "(" +
                           std::to_string(i) + "," + std::to_string(j) + ")");
      const double fd = (up - dn) / (2.0 * step);
      const double ga = analytic[pi](i, j);
      const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_row = i;
        entry.worst_col = j;
        entry.analytic = ga;
        entry.finite_diff = fd;
      }
      ++entry.coords_checked;
    }
    for (Param* q : params) q->zero_grad();
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mmfuse

#include "msmiv/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msmiv {

void set_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

int block_count(Eigen::Index n) { return static_cast<int>((n + kBlock - 1) / kBlock); }

void add_rows(const std::vector<std::int32_t>& cell, const std::vector<std::uint8_t>& arm, int arms,
              const Eigen::VectorXd& w, const Eigen::MatrixXd& R, Eigen::Index lo, Eigen::Index hi,
              double* ws, double* ss) {
  const Eigen::Index m = R.cols();
  for (Eigen::Index i = lo; i < hi; ++i) {
    const double wi = w[i];
    if (wi == 0.0) continue;
    const std::size_t slot = static_cast<std::size_t>(cell[static_cast<std::size_t>(i)]) * arms +
                             (arms > 1 ? arm[static_cast<std::size_t>(i)] : 0);
    ws[slot] += wi;
    double* row = ss + slot * static_cast<std::size_t>(m);
    for (Eigen::Index c = 0; c < m; ++c) row[c] += wi * R(i, c);
  }
}

}  // namespace

CellSums accumulate_cells(ExecPolicy policy, const std::vector<std::int32_t>& cell, const std::vector<std::uint8_t>& arm,
                          int cells, int arms, const Eigen::VectorXd& w, const Eigen::MatrixXd& R) {
  CellSums out;
  out.cells = cells;
  out.arms = arms;
  out.m = static_cast<int>(R.cols());
  const std::size_t slots = static_cast<std::size_t>(cells) * arms;
  out.w.assign(slots, 0.0);
  out.s.assign(slots * static_cast<std::size_t>(out.m), 0.0);
  const Eigen::Index n = R.rows();
  const int blocks = block_count(n);
  if (policy == ExecPolicy::serial || blocks <= 1) {
    add_rows(cell, arm, arms, w, R, 0, n, out.w.data(), out.s.data());
    return out;
  }
  std::vector<std::vector<double>> pw(static_cast<std::size_t>(blocks)), ps(static_cast<std::size_t>(blocks));
#pragma omp parallel for schedule(static)
  for (int b = 0; b < blocks; ++b) {
    auto& bw = pw[static_cast<std::size_t>(b)];
    auto& bs = ps[static_cast<std::size_t>(b)];
    bw.assign(slots, 0.0);
    bs.assign(slots * static_cast<std::size_t>(out.m), 0.0);
    const Eigen::Index lo = static_cast<Eigen::Index>(b) * kBlock, hi = std::min<Eigen::Index>(n, lo + kBlock);
    add_rows(cell, arm, arms, w, R, lo, hi, bw.data(), bs.data());
  }
  for (int b = 0; b < blocks; ++b) {
    for (std::size_t k = 0; k < slots; ++k) out.w[k] += pw[static_cast<std::size_t>(b)][k];
    for (std::size_t k = 0; k < out.s.size(); ++k) out.s[k] += ps[static_cast<std::size_t>(b)][k];
  }
  return out;
}

Eigen::RowVectorXd weighted_col_sum(ExecPolicy policy, const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
  const Eigen::Index n = X.rows();
  if (policy == ExecPolicy::serial) {
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(X.cols());
    for (Eigen::Index i = 0; i < n; ++i) s += w[i] * X.row(i);
    return s;
  }
  const int blocks = block_count(n);
  Eigen::MatrixXd part = Eigen::MatrixXd::Zero(std::max(blocks, 1), X.cols());
#pragma omp parallel for schedule(static)
  for (int b = 0; b < blocks; ++b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b) * kBlock, hi = std::min<Eigen::Index>(n, lo + kBlock);
    for (Eigen::Index i = lo; i < hi; ++i) part.row(b) += w[i] * X.row(i);
  }
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(X.cols());
  for (int b = 0; b < blocks; ++b) s += part.row(b);
  return s;
}

Eigen::MatrixXd weighted_gram(ExecPolicy policy, const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (policy == ExecPolicy::serial) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) G.noalias() += w[i] * X.row(i).transpose() * X.row(i);
    return G;
  }
  const int blocks = block_count(n);
  std::vector<Eigen::MatrixXd> part(static_cast<std::size_t>(blocks), Eigen::MatrixXd::Zero(p, p));
#pragma omp parallel for schedule(static)
  for (int b = 0; b < blocks; ++b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b) * kBlock, hi = std::min<Eigen::Index>(n, lo + kBlock);
    auto Xb = X.middleRows(lo, hi - lo);
    part[static_cast<std::size_t>(b)] = Xb.transpose() * w.segment(lo, hi - lo).asDiagonal() * Xb;
  }
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p, p);
  for (const auto& P : part) G += P;
  return G;
}

}  // namespace msmiv

#ifndef MSMIV_KERNELS_HPP
#define MSMIV_KERNELS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace msmiv {

/// serial: plain loops, kept as the reference implementation.
/// parallel: OpenMP over fixed blocks of kBlock subjects; partial results are
/// merged in block order, so output does not depend on the thread count.
enum class ExecPolicy { serial, parallel };

inline constexpr int kBlock = 1024;

/// Number of OpenMP threads (from --threads, MSM_IV_THREADS, or the runtime default).
void set_threads(int threads);
int max_threads();

template <class F>
void for_each_subject(ExecPolicy policy, int n, F&& f) {
  if (policy == ExecPolicy::parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) f(i);
  } else {
    for (int i = 0; i < n; ++i) f(i);
  }
}

/// Per-(cell, arm) weighted sums of the rows of R.
struct CellSums {
  int cells = 0, arms = 0, m = 0;
  std::vector<double> w;  ///< cells * arms
  std::vector<double> s;  ///< (cell * arms + arm) * m + col
};

CellSums accumulate_cells(ExecPolicy policy, const std::vector<std::int32_t>& cell,
                          const std::vector<std::uint8_t>& arm, int cells, int arms,
                          const Eigen::VectorXd& w, const Eigen::MatrixXd& R);

/// sum_i w_i X.row(i), blocked.
Eigen::RowVectorXd weighted_col_sum(ExecPolicy policy, const Eigen::MatrixXd& X, const Eigen::VectorXd& w);

/// sum_i w_i x_i x_i' for the rows of X, blocked.
Eigen::MatrixXd weighted_gram(ExecPolicy policy, const Eigen::MatrixXd& X, const Eigen::VectorXd& w);

}  // namespace msmiv

#endif  // MSMIV_KERNELS_HPP

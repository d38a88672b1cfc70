#pragma once

#include <vector>

#include "metamix/errors.hpp"

namespace metamix {

// Lower-triangular accuracy bookkeeping: cell (i, j), j <= i, holds test
// accuracy on task j measured after finishing task i. Zero-based indices.
class AccMatrix {
public:
    explicit AccMatrix(int T);

    int size() const { return T_; }

    // Write-once; overwrite or out-of-triangle indices throw BookkeepingError.
    void record(int i, int j, double acc);

    bool defined(int i, int j) const;
    double at(int i, int j) const;

private:
    int T_;
    std::vector<double> cells_;
    std::vector<char> set_;
};

enum class BwtNorm {
    paper,     // divide the T-1 term sum by T
    standard,  // divide by T-1
};

// Mean of the last row: (1/T) * sum_j R[T-1][j].
double acc_metric(const AccMatrix& m);

// Mean forgetting: sum_{j<T-1} (R[T-1][j] - R[j][j]) over the chosen
// denominator. Undefined for T == 1.
double bwt_metric(const AccMatrix& m, BwtNorm norm = BwtNorm::paper);

// Per-task column maxima: for each task j, max over i >= j of R[i][j].
std::vector<double> historical_highest(const AccMatrix& m);

}  // namespace metamix

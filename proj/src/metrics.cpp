#include "metamix/metrics.hpp"

#include <algorithm>
#include <string>

namespace metamix {

AccMatrix::AccMatrix(int T) : T_(T) {
    if (T < 1) throw ConfigError("accuracy matrix needs T >= 1");
    cells_.assign(static_cast<std::size_t>(T) * T, 0.0);
    set_.assign(static_cast<std::size_t>(T) * T, 0);
}

void AccMatrix::record(int i, int j, double acc) {
    if (i < 0 || i >= T_ || j < 0 || j > i) {
        throw BookkeepingError("cell (" + std::to_string(i) + ", " + std::to_string(j) +
                               ") outside the lower triangle of T=" + std::to_string(T_));
    }
    if (!(acc >= 0.0 && acc <= 1.0)) {
        throw BookkeepingError("accuracy " + std::to_string(acc) + " outside [0, 1]");
    }
    const std::size_t idx = static_cast<std::size_t>(i) * T_ + j;
    if (set_[idx]) {
        throw BookkeepingError("cell (" + std::to_string(i) + ", " + std::to_string(j) +
                               ") already recorded");
    }
    cells_[idx] = acc;
    set_[idx] = 1;
}

bool AccMatrix::defined(int i, int j) const {
    if (i < 0 || i >= T_ || j < 0 || j >= T_) return false;
    return set_[static_cast<std::size_t>(i) * T_ + j] != 0;
}

double AccMatrix::at(int i, int j) const {
    if (!defined(i, j)) {
        throw BookkeepingError("cell (" + std::to_string(i) + ", " + std::to_string(j) +
                               ") is not defined");
    }
    return cells_[static_cast<std::size_t>(i) * T_ + j];
}

double acc_metric(const AccMatrix& m) {
    const int T = m.size();
    double sum = 0.0;
    for (int j = 0; j < T; ++j) sum += m.at(T - 1, j);
    return sum / T;
}

double bwt_metric(const AccMatrix& m, BwtNorm norm) {
    const int T = m.size();
    if (T < 2) throw UndefinedMetricError("BWT is undefined for a single task");
    double sum = 0.0;
    for (int j = 0; j < T - 1; ++j) sum += m.at(T - 1, j) - m.at(j, j);
    return sum / (norm == BwtNorm::paper ? T : T - 1);
}

std::vector<double> historical_highest(const AccMatrix& m) {
    const int T = m.size();
    std::vector<double> best(static_cast<std::size_t>(T));
    for (int j = 0; j < T; ++j) {
        double hi = m.at(j, j);
        for (int i = j; i < T; ++i) hi = std::max(hi, m.at(i, j));
        best[static_cast<std::size_t>(j)] = hi;
    }
    return best;
}

}  // namespace metamix

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace enet {

/// Outcome of comparing an analytic gradient against central finite
/// differences. Failures are report content, not exceptions.
struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries = 0;
    double tolerance = 0.0;
    bool pass = false;
};

/// rel(a, n) with an absolute floor so that near-zero pairs do not produce
/// spurious blowups; a floor-sized denominator still flags real mismatches.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-3) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Central finite differences of `f` at `x`, compared entry-by-entry against
/// `analytic`. `f` must be a pure scalar function of x.
inline GradCheckReport grad_check(const std::string& name,
                                  const std::function<double(const std::vector<double>&)>& f,
                                  std::vector<double> x, const std::vector<double>& analytic,
                                  double h = 1e-5, double tolerance = 1e-4) {
    GradCheckReport r;
    r.name = name;
    r.entries = x.size();
    r.tolerance = tolerance;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = f(x);
        x[i] = keep - h;
        const double fm = f(x);
        x[i] = keep;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = grad_rel_err(analytic[i], numeric);
        if (rel >= r.max_rel_err) {
            r.max_rel_err = rel;
            r.worst_index = i;
            r.worst_analytic = analytic[i];
            r.worst_numeric = numeric;
        }
    }
    r.pass = r.max_rel_err < tolerance;
    return r;
}

}  // namespace enet

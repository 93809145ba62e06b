#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vitloc/tape.hpp"

namespace vitloc {

/// Central-finite-difference verification of reverse-mode gradients.
///
/// `build` receives a fresh tape plus one leaf id per entry of `points` (in
/// order) and returns the scalar loss id. Returns the max over all parameter
/// elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(
    const std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>& build,
    const std::vector<Tensor<double>>& points, double step = 1e-5) {
    auto eval = [&](const std::vector<Tensor<double>>& xs) {
        Tape<double> tape;
        std::vector<Tape<double>::Id> ids;
        ids.reserve(xs.size());
        for (const auto& x : xs) ids.push_back(tape.leaf(x, true));
        const auto loss = build(tape, ids);
        return tape.value(loss)[0];
    };

    // analytic pass
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    for (const auto& x : points) ids.push_back(tape.leaf(x, true));
    tape.backward(build(tape, ids));

    double worst = 0.0;
    std::vector<Tensor<double>> probe = points;
    for (std::size_t p = 0; p < points.size(); ++p) {
        const Tensor<double>& analytic = tape.grad(ids[p]);
        for (std::size_t e = 0; e < probe[p].numel(); ++e) {
            const double keep = probe[p][e];
            probe[p][e] = keep + step;
            const double up = eval(probe);
            probe[p][e] = keep - step;
            const double down = eval(probe);
            probe[p][e] = keep;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[e];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace vitloc

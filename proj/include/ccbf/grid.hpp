#pragma once

#include "ccbf/errors.hpp"
#include "ccbf/linalg.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace ccbf {

/// One grid axis: `count` evenly spaced samples on [lo, hi], endpoints included.
/// A single-sample axis pins a coordinate (requires lo == hi).
struct AxisSpec {
    double lo = 0.0;
    double hi = 0.0;
    int count = 0;

    double coord(int i) const {
        if (count == 1) return lo;
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
};

/// Rectangular sample grid. Points are enumerated row-major with the last axis
/// fastest, so flat indices are stable and reductions are deterministic.
struct GridSpec {
    std::vector<AxisSpec> axes;

    int dim() const { return static_cast<int>(axes.size()); }

    std::size_t size() const {
        if (axes.empty()) return 0;
        std::size_t n = 1;
        for (const auto& a : axes) n *= static_cast<std::size_t>(a.count);
        return n;
    }

    void validate() const {
        if (axes.empty()) throw EmptyGridError("grid has no axes");
        for (const auto& a : axes) {
            if (a.count < 1) throw EmptyGridError("grid axis has no samples");
            if (!std::isfinite(a.lo) || !std::isfinite(a.hi) || a.hi < a.lo)
                throw EmptyGridError("grid axis range is not a finite interval");
            if (a.count == 1 && a.hi != a.lo)
                throw EmptyGridError("single-sample axis must have lo == hi");
        }
    }

    Vec point(std::size_t flat) const {
        Vec x(dim());
        for (int k = dim() - 1; k >= 0; --k) {
            const auto c = static_cast<std::size_t>(axes[static_cast<std::size_t>(k)].count);
            x[k] = axes[static_cast<std::size_t>(k)].coord(static_cast<int>(flat % c));
            flat /= c;
        }
        return x;
    }

    /// Refinement that keeps every existing sample: count -> (count-1)*factor + 1.
    GridSpec refined(int factor) const {
        GridSpec g = *this;
        for (auto& a : g.axes)
            if (a.count > 1) a.count = (a.count - 1) * factor + 1;
        return g;
    }

    /// Concatenate axes (e.g. configuration grid x velocity grid -> state grid).
    GridSpec concat(const GridSpec& other) const {
        GridSpec g = *this;
        g.axes.insert(g.axes.end(), other.axes.begin(), other.axes.end());
        return g;
    }

    static GridSpec uniform(const std::vector<double>& lo, const std::vector<double>& hi,
                            const std::vector<int>& counts) {
        GridSpec g;
        for (std::size_t i = 0; i < lo.size(); ++i) g.axes.push_back({lo[i], hi[i], counts[i]});
        return g;
    }
};

template <class F>
void for_each_point(const GridSpec& grid, F&& fn) {
    grid.validate();
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < n; ++i) fn(i, grid.point(i));
}

}  // namespace ccbf

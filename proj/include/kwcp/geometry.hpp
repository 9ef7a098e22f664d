#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace kwcp {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(const Point& a, const Point& b)
{
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// Uniform bucket grid over a point set for radius queries.
class SpatialGrid {
public:
    SpatialGrid(std::span<const Point> points, double cell_size);

    /// Indices of all points within `radius` of `center` (inclusive bound
    /// on bucket overlap, exact filtering left to the caller), ascending.
    std::vector<std::int64_t> candidates(const Point& center, double radius) const;

    /// Index of the nearest point; ties go to the smaller index.
    std::int64_t nearest(const Point& center) const;

private:
    std::int64_t bucket_of(double v, double lo, std::int64_t n) const;

    std::span<const Point> points_;
    double cell_ = 1.0;
    double min_x_ = 0.0, min_y_ = 0.0;
    std::int64_t nx_ = 1, ny_ = 1;
    std::vector<std::int64_t> offsets_;  // CSR over buckets
    std::vector<std::int64_t> members_;
};

} // namespace kwcp

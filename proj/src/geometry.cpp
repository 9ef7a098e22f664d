#include "kwcp/geometry.hpp"

#include <algorithm>
#include <limits>

namespace kwcp {

SpatialGrid::SpatialGrid(std::span<const Point> points, double cell_size) : points_(points)
{
    cell_ = cell_size > 0.0 && std::isfinite(cell_size) ? cell_size : 1.0;
    if (points_.empty()) {
        offsets_.assign(2, 0);
        return;
    }
    double max_x = points_[0].x, max_y = points_[0].y;
    min_x_ = points_[0].x;
    min_y_ = points_[0].y;
    for (const auto& pt : points_) {
        min_x_ = std::min(min_x_, pt.x);
        min_y_ = std::min(min_y_, pt.y);
        max_x = std::max(max_x, pt.x);
        max_y = std::max(max_y, pt.y);
    }
    // keep the bucket count bounded for tiny cells over wide extents
    const double span = std::max(max_x - min_x_, max_y - min_y_);
    const double max_buckets_per_axis = 4096.0;
    if (span / cell_ > max_buckets_per_axis) cell_ = span / max_buckets_per_axis;
    nx_ = static_cast<std::int64_t>((max_x - min_x_) / cell_) + 1;
    ny_ = static_cast<std::int64_t>((max_y - min_y_) / cell_) + 1;

    std::vector<std::int64_t> bucket(points_.size());
    offsets_.assign(static_cast<std::size_t>(nx_ * ny_ + 1), 0);
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto bx = bucket_of(points_[i].x, min_x_, nx_);
        const auto by = bucket_of(points_[i].y, min_y_, ny_);
        bucket[i] = by * nx_ + bx;
        ++offsets_[static_cast<std::size_t>(bucket[i] + 1)];
    }
    for (std::size_t b = 1; b < offsets_.size(); ++b) offsets_[b] += offsets_[b - 1];
    members_.resize(points_.size());
    std::vector<std::int64_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i)
        members_[static_cast<std::size_t>(fill[static_cast<std::size_t>(bucket[i])]++)] = static_cast<std::int64_t>(i);
}

std::int64_t SpatialGrid::bucket_of(double v, double lo, std::int64_t n) const
{
    auto b = static_cast<std::int64_t>(std::floor((v - lo) / cell_));
    return std::clamp<std::int64_t>(b, 0, n - 1);
}

std::vector<std::int64_t> SpatialGrid::candidates(const Point& center, double radius) const
{
    std::vector<std::int64_t> out;
    if (points_.empty()) return out;
    const auto x0 = bucket_of(center.x - radius, min_x_, nx_);
    const auto x1 = bucket_of(center.x + radius, min_x_, nx_);
    const auto y0 = bucket_of(center.y - radius, min_y_, ny_);
    const auto y1 = bucket_of(center.y + radius, min_y_, ny_);
    for (auto by = y0; by <= y1; ++by) {
        for (auto bx = x0; bx <= x1; ++bx) {
            const auto b = static_cast<std::size_t>(by * nx_ + bx);
            for (auto m = offsets_[b]; m < offsets_[b + 1]; ++m) out.push_back(members_[static_cast<std::size_t>(m)]);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::int64_t SpatialGrid::nearest(const Point& center) const
{
    if (points_.empty()) return -1;
    const auto cx = bucket_of(center.x, min_x_, nx_);
    const auto cy = bucket_of(center.y, min_y_, ny_);
    double best = std::numeric_limits<double>::infinity();
    std::int64_t best_index = -1;
    const std::int64_t max_ring = std::max(nx_, ny_);
    for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
        for (auto by = cy - ring; by <= cy + ring; ++by) {
            if (by < 0 || by >= ny_) continue;
            for (auto bx = cx - ring; bx <= cx + ring; ++bx) {
                if (bx < 0 || bx >= nx_) continue;
                if (std::max(std::abs(bx - cx), std::abs(by - cy)) != ring) continue;
                const auto b = static_cast<std::size_t>(by * nx_ + bx);
                for (auto m = offsets_[b]; m < offsets_[b + 1]; ++m) {
                    const auto idx = members_[static_cast<std::size_t>(m)];
                    const double d = distance(center, points_[static_cast<std::size_t>(idx)]);
                    if (d < best || (d == best && idx < best_index)) {
                        best = d;
                        best_index = idx;
                    }
                }
            }
        }
        // every unvisited bucket lies at least ring * cell away (center may
        // sit outside the extent, hence the clamp-independent bound)
        if (best_index >= 0 && best < static_cast<double>(ring) * cell_) break;
    }
    return best_index;
}

} // namespace kwcp

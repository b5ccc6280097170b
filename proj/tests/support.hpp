#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "esppct/pointcloud.hpp"
#include "esppct/rng.hpp"

namespace testing {

inline esppct::Point random_point(esppct::Rng& rng, double spread = 1.0) {
  return {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread),
          rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.0)};
}

inline esppct::Frame random_frame(esppct::Rng& rng, std::size_t n, double spread = 1.0) {
  esppct::Frame f;
  for (std::size_t i = 0; i < n; ++i) f.points.push_back(random_point(rng, spread));
  return f;
}

inline esppct::Sequence random_sequence(esppct::Rng& rng, std::size_t frames, std::size_t max_points) {
  esppct::Sequence s;
  std::int64_t ts = static_cast<std::int64_t>(rng.below(5));
  for (std::size_t f = 0; f < frames; ++f) {
    esppct::Frame fr = random_frame(rng, static_cast<std::size_t>(rng.below(max_points + 1)), 10.0);
    fr.timestamp_index = ts;
    ts += 1 + static_cast<std::int64_t>(rng.below(3));
    s.frames.push_back(std::move(fr));
  }
  if (rng.bernoulli(0.7)) s.label = static_cast<int>(rng.below(36));
  if (rng.bernoulli(0.5)) s.meta["note"] = "seq " + std::to_string(rng.below(1000));
  return s;
}

inline bool distinct_pairwise_distances(const esppct::Frame& f, double gap = 1e-6) {
  std::vector<double> d;
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    for (std::size_t j = i + 1; j < f.points.size(); ++j) {
      const auto a = f.points[i].position(), b = f.points[j].position();
      d.push_back(std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]));
    }
  }
  std::sort(d.begin(), d.end());
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i] - d[i - 1] < gap) return false;
  return true;
}

}  // namespace testing

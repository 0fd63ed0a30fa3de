#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/core/image.hpp"

namespace voxsplat::filter {

struct CandidateView {
  std::uint32_t view_id = 0;
  std::optional<double> semantic;
  double geometric = 0.0;
};

struct Thresholds {
  double semantic = 0.25;
  double geometric = 0.5;
};

/// Most frequent border color (32 levels per channel), averaged within its bin.
inline std::array<double, 3> dominant_border_color(const Image& img) {
  std::map<std::uint32_t, std::pair<std::size_t, std::array<double, 3>>> bins;
  const auto visit = [&](std::size_t x, std::size_t y) {
    std::uint32_t key = 0;
    std::array<double, 3> c{};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      c[ch] = img.at(x, y, img.channels == 1 ? 0 : ch);
      key = key * 32 + static_cast<std::uint32_t>(std::clamp(c[ch], 0.0, 1.0) * 31.0 + 0.5);
    }
    auto& [count, sum] = bins[key];
    ++count;
    for (std::size_t ch = 0; ch < 3; ++ch) sum[ch] += c[ch];
  };
  for (std::size_t x = 0; x < img.width; ++x) {
    visit(x, 0);
    if (img.height > 1) visit(x, img.height - 1);
  }
  for (std::size_t y = 1; y + 1 < img.height; ++y) {
    visit(0, y);
    if (img.width > 1) visit(img.width - 1, y);
  }
  auto best = bins.begin();
  for (auto it = bins.begin(); it != bins.end(); ++it)
    if (it->second.first > best->second.first) best = it;
  std::array<double, 3> color{};
  for (std::size_t ch = 0; ch < 3; ++ch) color[ch] = best->second.second[ch] / static_cast<double>(best->second.first);
  return color;
}

/// Foreground mask: RGB distance to the dominant border color above `threshold`.
inline std::vector<bool> estimate_foreground(const Image& img, double threshold = 0.1) {
  const auto bg = dominant_border_color(img);
  std::vector<bool> fg(img.pixels());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      double d2 = 0.0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double e = img.at(x, y, img.channels == 1 ? 0 : ch) - bg[ch];
        d2 += e * e;
      }
      fg[y * img.width + x] = std::sqrt(d2) > threshold;
    }
  return fg;
}

inline double mask_iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeError("mask_iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU between the candidate's estimated foreground and the coarse silhouette.
/// An all-background candidate scores 0.
inline double geometric_score(const Image& candidate, const Map2D& silhouette) {
  if (candidate.width != silhouette.width || candidate.height != silhouette.height) {
    throw ShapeError("geometric_score: candidate and silhouette sizes differ");
  }
  const auto fg = estimate_foreground(candidate);
  if (std::none_of(fg.begin(), fg.end(), [](bool v) { return v; })) return 0.0;
  std::vector<bool> sil(silhouette.pixels());
  for (std::size_t i = 0; i < sil.size(); ++i) sil[i] = silhouette.data[i] > 0.5;
  return mask_iou(fg, sil);
}

struct Selection {
  std::vector<std::uint32_t> selected;  // best first
  std::vector<std::string> warnings;
  bool insufficient = false;
};

/// Drops candidates below either threshold and keeps the best `target_count`
/// by mean score; ties go to the lower view id.
inline Selection select_views(const std::vector<CandidateView>& candidates, const Thresholds& th,
                              std::size_t target_count) {
  if (target_count == 0) throw InvalidArgument("select_views: target_count must be at least 1");
  Selection sel;
  std::vector<std::pair<double, std::uint32_t>> survivors;
  for (const auto& c : candidates) {
    double sem = 1.0;
    if (c.semantic) {
      sem = *c.semantic;
    } else {
      sel.warnings.push_back("view " + std::to_string(c.view_id) + ": no semantic score, assuming 1.0");
    }
    if (sem < th.semantic || c.geometric < th.geometric) continue;
    survivors.emplace_back(0.5 * (sem + c.geometric), c.view_id);
  }
  std::sort(survivors.begin(), survivors.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (survivors.size() < target_count) {
    sel.insufficient = true;
    sel.warnings.push_back("InsufficientViews: " + std::to_string(survivors.size()) + " of " +
                           std::to_string(target_count) + " requested views survived filtering");
  }
  for (std::size_t i = 0; i < std::min(target_count, survivors.size()); ++i) sel.selected.push_back(survivors[i].second);
  return sel;
}

/// Semantic scores file: [{"view_id": n, "score": s}, ...] with s in [0, 1].
inline std::map<std::uint32_t, double> parse_scores(const std::string& text, const std::string& source = "scores") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": " + e.what());
  }
  if (!j.is_array()) throw FormatError(source + ": expected a JSON array");
  std::map<std::uint32_t, double> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("view_id") || !e.contains("score") || !e["view_id"].is_number_unsigned() ||
        !e["score"].is_number()) {
      throw FormatError(source + ": entries need an unsigned view_id and a numeric score");
    }
    const double s = e["score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0)) throw FormatError(source + ": score outside [0, 1]");
    out[e["view_id"].get<std::uint32_t>()] = s;
  }
  return out;
}

inline std::map<std::uint32_t, double> load_scores(const std::string& path) { return parse_scores(io::read_text(path), path); }

inline void save_scores(const std::string& path, const std::map<std::uint32_t, double>& scores) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [id, s] : scores) j.push_back({{"view_id", id}, {"score", s}});
  io::write_text(path, j.dump(2) + "\n");
}

}  // namespace voxsplat::filter

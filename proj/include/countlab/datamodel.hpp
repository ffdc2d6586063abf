#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "countlab/image.hpp"

namespace countlab {

/// Ordered, fixed list of cell categories.
class CategorySet {
 public:
  explicit CategorySet(std::vector<std::string> names);

  /// ["negative tumor cell", "positive tumor cell"]
  static CategorySet ihc_default();

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

/// Count bins {0}, {1}, ..., {n-1}, [n, inf). The open bin is represented by n.
class CountBinning {
 public:
  explicit CountBinning(int n);

  int n() const { return n_; }
  int num_bins() const { return n_ + 1; }
  bool is_open(int bin) const { return bin == n_; }
  double representative(int bin) const;
  int bin_of(int64_t count) const { return count >= n_ ? n_ : static_cast<int>(count); }

 private:
  int n_;
};

struct PointAnnotation {
  double x = 0.0;
  double y = 0.0;
  int category = 0;

  bool operator==(const PointAnnotation&) const = default;
};

struct AnnotatedImage {
  std::string id;
  Image pixels;
  std::vector<PointAnnotation> points;

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
};

/// Blockwise count and bin-index targets on an H' x W' grid, row-major
/// (block row, block column, category).
class BlockTargets {
 public:
  BlockTargets(int rows, int cols, int categories);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int categories() const { return categories_; }

  int64_t count(int u, int v, int i) const { return counts_[index(u, v, i)]; }
  int class_index(int u, int v, int i) const { return classes_[index(u, v, i)]; }
  /// Spatial sum per category.
  std::vector<int64_t> totals() const;

  const std::vector<int64_t>& count_map() const { return counts_; }
  const std::vector<int>& class_index_map() const { return classes_; }

 private:
  friend BlockTargets build_block_targets(const std::vector<PointAnnotation>&, int, int, int,
                                          const CountBinning&, int);
  std::size_t index(int u, int v, int i) const {
    return (static_cast<std::size_t>(u) * cols_ + v) * categories_ + i;
  }

  int rows_, cols_, categories_;
  std::vector<int64_t> counts_;
  std::vector<int> classes_;
};

/// Assigns each point to block (floor(y/p), floor(x/p)). Points in the
/// remainder strip beyond floor(H/p)*p or floor(W/p)*p are dropped.
BlockTargets build_block_targets(const std::vector<PointAnnotation>& points, int height, int width,
                                 int patch, const CountBinning& binning, int categories);

/// One record of the dataset annotation document.
struct AnnotationRecord {
  std::string id;
  std::string path;  // relative to the annotation file's directory
  int height = 0;
  int width = 0;
  std::vector<PointAnnotation> points;
};

/// Parses {"images":[{"id","path","height","width","points":[[x,y,cat],...]}]}.
/// Errors name the line of the offending record.
std::vector<AnnotationRecord> parse_annotation_records(const std::string& text);

/// Reads the annotation document and the PNG each record points to.
std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path);

/// Writes one record per line so that diagnostics can cite line numbers.
void save_annotation_records(const std::filesystem::path& path,
                             const std::vector<AnnotationRecord>& records);

}  // namespace countlab

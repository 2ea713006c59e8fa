#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dictnet/graph.hpp"
#include "dictnet/rng.hpp"
#include "dictnet/tensor.hpp"

namespace dictnet {

/// Labeled image set. Pixels live in [0, 1]. `labels` may be in the original
/// dataset space or remapped to contiguous model rows; remapped datasets carry
/// `label_map` (contiguous id -> original label).
struct Dataset {
  Tensor4 images;              // (N, C, H, W)
  std::vector<int> labels;     // length N
  std::vector<int> class_ids;  // sorted distinct labels
  std::vector<int> label_map;  // empty unless labels were remapped

  std::size_t size() const { return labels.size(); }
  Shape3 sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  /// Recomputes class_ids from labels and checks basic invariants.
  void finalize();

  /// Indices of every sample with the given label.
  std::vector<std::size_t> indices_of(int label) const;
};

struct Batch {
  Tensor4 images;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

/// First n samples (dataset order).
Dataset take_first(const Dataset& data, std::size_t n);

Dataset concat(const Dataset& a, const Dataset& b);

/// Parses big-endian IDX files (magic 0x00000803 images / 0x00000801 labels);
/// gzip-compressed files are inflated transparently. Pixel bytes map to
/// [0, 1] as v / 255.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

struct OldNewSplit {
  Dataset old_train;  // labels remapped to 0..K-1, label_map records originals
  Dataset old_test;   // same remapping
  Dataset new_pool;   // held-out classes from the test set, original labels
};

/// Partitions a train/test pair by held-out class list. Throws DataError on
/// unknown class ids.
OldNewSplit split_old_new(const Dataset& train, const Dataset& test,
                          const std::vector<int>& held_out_classes);

/// Deterministic Gaussian-blob classes rendered as images; class centers sit
/// on a ring so any pair stays separable. For fast tests.
Dataset synthetic_dataset(std::uint64_t seed, std::size_t classes, std::size_t samples_per_class,
                          Shape3 shape = {1, 16, 16});

struct ImageFolder {
  Dataset data;  // class ids are indices into class_names
  std::vector<std::string> class_names;
};

/// Loads one-subdirectory-per-class image trees (binary PGM/PPM, 8-bit),
/// bilinear-resized to `target`. RGB collapses to Rec.601 luma when
/// target.c == 1; grayscale replicates when target.c == 3.
ImageFolder load_image_folder(const std::string& root, Shape3 target);

/// Appends 90/180/270-degree rotated copies of every sample.
Dataset augment_rotations(const Dataset& data);

Tensor4 rotate90(const Tensor4& images, int quarter_turns);

}  // namespace dictnet

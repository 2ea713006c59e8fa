#include "dictnet/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

namespace dictnet {

namespace fs = std::filesystem;

void Dataset::finalize() {
  if (labels.size() != images.dim(0)) {
    throw DataError("dataset: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(images.dim(0)) + " images");
  }
  std::set<int> ids(labels.begin(), labels.end());
  class_ids.assign(ids.begin(), ids.end());
}

std::vector<std::size_t> Dataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  const auto [n, c, h, w] = data.images.dims();
  (void)n;
  Batch b{Tensor4(indices.size(), c, h, w), {}};
  b.labels.reserve(indices.size());
  const std::size_t stride = c * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(b.images.data() + i * stride, data.images.data() + indices[i] * stride,
                stride * sizeof(double));
    b.labels.push_back(data.labels[indices[i]]);
  }
  return b;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Batch b = make_batch(data, indices);
  Dataset out{std::move(b.images), std::move(b.labels), {}, data.label_map};
  out.finalize();
  return out;
}

Dataset take_first(const Dataset& data, std::size_t n) {
  n = std::min(n, data.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return subset(data, idx);
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.sample_shape() != b.sample_shape()) {
    throw DataError("concat: sample shapes differ (" + a.sample_shape().str() + " vs " +
                    b.sample_shape().str() + ")");
  }
  const auto [an, c, h, w] = a.images.dims();
  const auto bn = b.images.dim(0);
  Dataset out;
  out.images = Tensor4(an + bn, c, h, w);
  std::memcpy(out.images.data(), a.images.data(), a.images.size() * sizeof(double));
  std::memcpy(out.images.data() + a.images.size(), b.images.data(),
              b.images.size() * sizeof(double));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.label_map = a.label_map;
  out.finalize();
  return out;
}

namespace {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) {
    throw DataError("zlib init failed for '" + path + "'");
  }
  std::vector<std::uint8_t> out;
  out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::size_t written = 0;
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw TruncatedFileError("gzip stream in '" + path + "' is corrupt or truncated");
    }
    written = out.size() - zs.avail_out;
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

std::vector<std::uint8_t> read_maybe_gz(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    return gunzip(bytes, path);
  }
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at,
                        const std::string& path) {
  if (at + 4 > b.size()) {
    throw TruncatedFileError("'" + path + "' ends inside the header");
  }
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_maybe_gz(images_path);
  const auto lab = read_maybe_gz(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != 0x00000803u) {
    throw BadMagicError("'" + images_path + "': expected IDX image magic 0x00000803");
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801u) {
    throw BadMagicError("'" + labels_path + "': expected IDX label magic 0x00000801");
  }
  const std::uint32_t n = read_be32(img, 4, images_path);
  const std::uint32_t h = read_be32(img, 8, images_path);
  const std::uint32_t w = read_be32(img, 12, images_path);
  const std::uint32_t nl = read_be32(lab, 4, labels_path);
  if (n != nl) {
    throw CountMismatchError("image file has " + std::to_string(n) + " samples, label file " +
                             std::to_string(nl));
  }
  const std::size_t need = 16 + std::size_t(n) * h * w;
  if (img.size() < need) {
    throw TruncatedFileError("'" + images_path + "': " + std::to_string(img.size()) +
                             " bytes, need " + std::to_string(need));
  }
  if (lab.size() < 8 + n) {
    throw TruncatedFileError("'" + labels_path + "': " + std::to_string(lab.size()) +
                             " bytes, need " + std::to_string(8 + n));
  }

  Dataset out;
  out.images = Tensor4(n, 1, h, w);
  for (std::size_t i = 0; i < std::size_t(n) * h * w; ++i) {
    out.images.values()[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(lab[8 + i]);
  out.finalize();
  return out;
}

namespace {

Dataset remap_to_rows(const Dataset& src, const std::vector<std::size_t>& indices,
                      const std::map<int, int>& to_row, const std::vector<int>& label_map) {
  Batch b = make_batch(src, indices);
  Dataset out{std::move(b.images), {}, {}, label_map};
  out.labels.reserve(b.labels.size());
  for (int l : b.labels) out.labels.push_back(to_row.at(l));
  out.finalize();
  return out;
}

}  // namespace

OldNewSplit split_old_new(const Dataset& train, const Dataset& test,
                          const std::vector<int>& held_out_classes) {
  std::set<int> known(train.class_ids.begin(), train.class_ids.end());
  for (int c : test.class_ids) known.insert(c);
  std::set<int> held(held_out_classes.begin(), held_out_classes.end());
  for (int c : held) {
    if (!known.count(c)) {
      throw DataError("held-out class " + std::to_string(c) + " not present in the data");
    }
  }

  std::vector<int> label_map;  // row -> original label, rows in sorted label order
  for (int c : known) {
    if (!held.count(c)) label_map.push_back(c);
  }
  std::map<int, int> to_row;
  for (std::size_t i = 0; i < label_map.size(); ++i) to_row[label_map[i]] = static_cast<int>(i);

  auto pick = [&held](const Dataset& d, bool in_held) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (held.count(d.labels[i]) == static_cast<std::size_t>(in_held)) idx.push_back(i);
    }
    return idx;
  };

  OldNewSplit out;
  out.old_train = remap_to_rows(train, pick(train, false), to_row, label_map);
  out.old_test = remap_to_rows(test, pick(test, false), to_row, label_map);
  out.new_pool = subset(test, pick(test, true));
  out.new_pool.label_map.clear();
  return out;
}

Dataset synthetic_dataset(std::uint64_t seed, std::size_t classes, std::size_t samples_per_class,
                          Shape3 shape) {
  if (classes == 0 || samples_per_class == 0) {
    throw ArgumentError("synthetic_dataset: classes and samples must be >= 1");
  }
  Rng rng(seed);
  const double cy0 = (shape.h - 1) / 2.0;
  const double cx0 = (shape.w - 1) / 2.0;
  const double ring = 0.30 * std::min(shape.h, shape.w);

  Dataset out;
  out.images = Tensor4(classes * samples_per_class, shape.c, shape.h, shape.w);
  out.labels.resize(classes * samples_per_class);

  std::size_t s = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / classes;
    const double cy = cy0 + ring * std::sin(angle);
    const double cx = cx0 + ring * std::cos(angle);
    const double sigma = 0.10 * std::min(shape.h, shape.w);
    for (std::size_t k = 0; k < samples_per_class; ++k, ++s) {
      const double jy = cy + rng.normal(0.0, 0.5);
      const double jx = cx + rng.normal(0.0, 0.5);
      for (std::size_t ch = 0; ch < shape.c; ++ch) {
        double* plane = out.images.plane(s, ch);
        for (std::size_t y = 0; y < shape.h; ++y) {
          for (std::size_t x = 0; x < shape.w; ++x) {
            const double d2 = (y - jy) * (y - jy) + (x - jx) * (x - jx);
            double v = std::exp(-d2 / (2.0 * sigma * sigma));
            v += rng.normal(0.0, 0.02);
            plane[y * shape.w + x] = std::clamp(v, 0.0, 1.0);
          }
        }
      }
      out.labels[s] = static_cast<int>(c);
    }
  }
  out.finalize();
  return out;
}

namespace {

struct RawImage {
  std::size_t channels = 0, h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // interleaved for RGB
};

RawImage load_pnm(const std::string& path) {
  const auto bytes = read_maybe_gz(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw BadMagicError("'" + path + "': expected binary PGM (P5) or PPM (P6)");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  auto next_token = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
    }
    if (!any) throw TruncatedFileError("'" + path + "': header ends early");
    return v;
  };
  const std::size_t w = next_token();
  const std::size_t h = next_token();
  const std::size_t maxval = next_token();
  if (maxval != 255) {
    throw DataError("'" + path + "': only 8-bit images supported (maxval 255)");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t need = w * h * channels;
  if (bytes.size() < pos + need) {
    throw TruncatedFileError("'" + path + "': pixel payload truncated");
  }
  RawImage img{channels, h, w, {bytes.begin() + pos, bytes.begin() + pos + need}};
  return img;
}

/// Bilinear sample of channel `ch` at continuous (y, x).
double bilinear(const RawImage& img, std::size_t ch, double y, double x) {
  const auto clampi = [](double v, std::size_t hi) {
    return std::min<std::size_t>(hi, static_cast<std::size_t>(std::max(0.0, v)));
  };
  const std::size_t y0 = clampi(std::floor(y), img.h - 1);
  const std::size_t x0 = clampi(std::floor(x), img.w - 1);
  const std::size_t y1 = std::min(y0 + 1, img.h - 1);
  const std::size_t x1 = std::min(x0 + 1, img.w - 1);
  const double fy = y - std::floor(y);
  const double fx = x - std::floor(x);
  auto px = [&](std::size_t yy, std::size_t xx) {
    return static_cast<double>(img.pixels[(yy * img.w + xx) * img.channels + ch]) / 255.0;
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
         fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
}

void resample_into(const RawImage& img, Tensor4& images, std::size_t sample, Shape3 target) {
  for (std::size_t c = 0; c < target.c; ++c) {
    double* plane = images.plane(sample, c);
    for (std::size_t y = 0; y < target.h; ++y) {
      for (std::size_t x = 0; x < target.w; ++x) {
        const double sy = (static_cast<double>(y) + 0.5) * img.h / target.h - 0.5;
        const double sx = (static_cast<double>(x) + 0.5) * img.w / target.w - 0.5;
        double v;
        if (img.channels == target.c) {
          v = bilinear(img, c, sy, sx);
        } else if (target.c == 1) {
          // Rec.601 luma
          v = 0.299 * bilinear(img, 0, sy, sx) + 0.587 * bilinear(img, 1, sy, sx) +
              0.114 * bilinear(img, 2, sy, sx);
        } else {
          v = bilinear(img, 0, sy, sx);  // replicate grayscale
        }
        plane[y * target.w + x] = v;
      }
    }
  }
}

}  // namespace

ImageFolder load_image_folder(const std::string& root, Shape3 target) {
  if (target.c != 1 && target.c != 3) {
    throw ArgumentError("load_image_folder: target channels must be 1 or 3");
  }
  if (!fs::is_directory(root)) {
    throw DataError("'" + root + "' is not a directory");
  }
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    throw DataError("'" + root + "' has no class subdirectories");
  }

  std::vector<std::pair<std::string, int>> files;  // path, class id
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[c])) {
      if (e.is_regular_file()) names.push_back(e.path().string());
    }
    std::sort(names.begin(), names.end());
    for (auto& nm : names) files.emplace_back(std::move(nm), static_cast<int>(c));
  }
  if (files.empty()) throw DataError("'" + root + "' contains no images");

  ImageFolder out;
  out.class_names = class_dirs;
  out.data.images = Tensor4(files.size(), target.c, target.h, target.w);
  out.data.labels.resize(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    resample_into(load_pnm(files[i].first), out.data.images, i, target);
    out.data.labels[i] = files[i].second;
  }
  out.data.finalize();
  return out;
}

Tensor4 rotate90(const Tensor4& images, int quarter_turns) {
  const auto [n, c, h, w] = images.dims();
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return images;
  const bool swap = (q == 1 || q == 3);
  Tensor4 out(n, c, swap ? w : h, swap ? h : w);
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = images.plane(in, ch);
      double* dst = out.plane(in, ch);
      const std::size_t oh = out.dim(2), ow = out.dim(3);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          std::size_t oy = 0, ox = 0;
          switch (q) {
            case 1: oy = x; ox = h - 1 - y; break;          // 90 deg clockwise
            case 2: oy = h - 1 - y; ox = w - 1 - x; break;  // 180
            case 3: oy = w - 1 - x; ox = y; break;          // 270
          }
          dst[oy * ow + ox] = src[y * w + x];
        }
      }
    }
  }
  return out;
}

Dataset augment_rotations(const Dataset& data) {
  Dataset out = data;
  for (int q = 1; q <= 3; ++q) {
    Dataset rot{rotate90(data.images, q), data.labels, {}, data.label_map};
    rot.finalize();
    out = concat(out, rot);
  }
  return out;
}

}  // namespace dictnet

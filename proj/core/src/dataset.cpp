// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "laminar/error.hpp"
#include "laminar/rng.hpp"

namespace laminar {

std::vector<std::int64_t> Dataset::sample_shape() const {
  std::vector<std::int64_t> s(features.shape().begin() + 1, features.shape().end());
  return s;
}

Tensor Dataset::feature_rows(std::int64_t start, std::int64_t count) const {
  if (start < 0 || count < 1 || start + count > n()) {
    throw Error(msg("feature_rows [", start, ", ", start + count, ") outside dataset of ", n()));
  }
  std::int64_t row = 1;
  for (int i = 1; i < features.rank(); ++i) row *= features.dim(i);
  std::vector<std::int64_t> shape = features.shape();
  shape[0] = count;
  std::vector<double> values(features.storage().begin() + start * row,
                             features.storage().begin() + (start + count) * row);
  return Tensor(std::move(shape), std::move(values));
}

std::vector<std::int64_t> Dataset::label_rows(std::int64_t start, std::int64_t count) const {
  if (start < 0 || count < 1 || start + count > n()) {
    throw Error(msg("label_rows [", start, ", ", start + count, ") outside dataset of ", n()));
  }
  return std::vector<std::int64_t>(labels.begin() + start, labels.begin() + start + count);
}

void Dataset::shuffle(std::uint64_t seed) {
  Rng rng(seed);
  const auto perm = rng.permutation(n());
  std::int64_t row = 1;
  for (int i = 1; i < features.rank(); ++i) row *= features.dim(i);
  std::vector<double> fs(features.storage().size());
  std::vector<std::int64_t> ls(labels.size());
  for (std::int64_t i = 0; i < n(); ++i) {
    const std::int64_t src = perm[static_cast<std::size_t>(i)];
    std::copy(features.storage().begin() + src * row, features.storage().begin() + (src + 1) * row,
              fs.begin() + i * row);
    ls[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
  }
  features = Tensor(features.shape(), std::move(fs));
  labels = std::move(ls);
}

Dataset make_spiral(std::int64_t n, std::int64_t classes, std::uint64_t seed) {
  if (n < classes || classes < 2) {
    throw ConfigError(msg("spiral wants n >= classes >= 2, got n=", n, " classes=", classes));
  }
  Rng rng(seed);
  Dataset d;
  d.classes = classes;
  std::vector<double> fs;
  fs.reserve(static_cast<std::size_t>(2 * n));
  d.labels.reserve(static_cast<std::size_t>(n));
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (std::int64_t c = 0; c < classes; ++c) {
    const std::int64_t count = n / classes + (c < n % classes ? 1 : 0);
    for (std::int64_t i = 0; i < count; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(count);
      const double radius = 0.1 + 0.9 * t;
      const double angle =
          two_pi * static_cast<double>(c) / static_cast<double>(classes) + 1.5 * two_pi * t;
      fs.push_back(radius * std::sin(angle) + 0.08 * rng.normal());
      fs.push_back(radius * std::cos(angle) + 0.08 * rng.normal());
      d.labels.push_back(c);
    }
  }
  d.features = Tensor({n, 2}, std::move(fs));
  return d;
}

Dataset make_blobs(std::int64_t n, std::int64_t classes, std::int64_t dim, std::uint64_t seed) {
  if (n < classes || classes < 2 || dim < 2) {
    throw ConfigError(
        msg("blobs wants n >= classes >= 2 and dim >= 2, got n=", n, " classes=", classes,
            " dim=", dim));
  }
  Rng rng(seed);
  Dataset d;
  d.classes = classes;
  std::vector<double> fs;
  fs.reserve(static_cast<std::size_t>(dim * n));
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (std::int64_t c = 0; c < classes; ++c) {
    const std::int64_t count = n / classes + (c < n % classes ? 1 : 0);
    const double angle = two_pi * static_cast<double>(c) / static_cast<double>(classes);
    for (std::int64_t i = 0; i < count; ++i) {
      for (std::int64_t k = 0; k < dim; ++k) {
        double center = 0.0;
        if (k == 0) center = 3.0 * std::cos(angle);
        if (k == 1) center = 3.0 * std::sin(angle);
        fs.push_back(center + 0.6 * rng.normal());
      }
      d.labels.push_back(c);
    }
  }
  d.features = Tensor({n, dim}, std::move(fs));
  return d;
}

namespace {

std::map<std::string, std::string> parse_kv(const std::string& body, const std::string& spec) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(msg("data spec '", spec, "': expected key=value, got '", item, "'"));
    }
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

std::int64_t want_int(const std::map<std::string, std::string>& kv, const std::string& key,
                      std::int64_t fallback, const std::string& spec) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    if (fallback >= 0) return fallback;
    throw ConfigError(msg("data spec '", spec, "': missing ", key, "=N"));
  }
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw ConfigError(msg("data spec '", spec, "': ", key, "='", it->second, "' is not a number"));
  }
}

std::string want_str(const std::map<std::string, std::string>& kv, const std::string& key,
                     const std::string& spec) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError(msg("data spec '", spec, "': missing ", key, "=..."));
  return it->second;
}

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::int64_t offset) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) {
    throw Error(msg(path, ": expected 4 bytes at offset ", offset, ", got ", f.gcount()));
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw Error(msg(images_path, ": cannot open"));
  const auto magic_i = read_be32(fi, images_path, 0);
  if (magic_i != 0x00000803) {
    throw Error(msg(images_path, ": bad image magic 0x", std::hex, magic_i,
                    " (expected 0x803)"));
  }
  const auto count = static_cast<std::int64_t>(read_be32(fi, images_path, 4));
  const auto rows = static_cast<std::int64_t>(read_be32(fi, images_path, 8));
  const auto cols = static_cast<std::int64_t>(read_be32(fi, images_path, 12));
  if (count < 1 || rows < 1 || cols < 1) {
    throw Error(msg(images_path, ": bad header ", count, "x", rows, "x", cols));
  }
  const std::int64_t pixels = count * rows * cols;
  std::vector<unsigned char> raw(static_cast<std::size_t>(pixels));
  fi.read(reinterpret_cast<char*>(raw.data()), pixels);
  if (fi.gcount() != pixels) {
    throw Error(msg(images_path, ": expected ", pixels, " pixel bytes, got ", fi.gcount(),
                    " (offset 16)"));
  }

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw Error(msg(labels_path, ": cannot open"));
  const auto magic_l = read_be32(fl, labels_path, 0);
  if (magic_l != 0x00000801) {
    throw Error(msg(labels_path, ": bad label magic 0x", std::hex, magic_l,
                    " (expected 0x801)"));
  }
  const auto lcount = static_cast<std::int64_t>(read_be32(fl, labels_path, 4));
  if (lcount != count) {
    throw Error(msg(labels_path, ": ", lcount, " labels for ", count, " images"));
  }
  std::vector<unsigned char> lraw(static_cast<std::size_t>(count));
  fl.read(reinterpret_cast<char*>(lraw.data()), count);
  if (fl.gcount() != count) {
    throw Error(msg(labels_path, ": expected ", count, " label bytes, got ", fl.gcount(),
                    " (offset 8)"));
  }

  Dataset d;
  std::vector<double> fs(static_cast<std::size_t>(pixels));
  for (std::int64_t i = 0; i < pixels; ++i) {
    fs[static_cast<std::size_t>(i)] = static_cast<double>(raw[static_cast<std::size_t>(i)]) / 255.0;
  }
  d.features = Tensor({count, rows, cols}, std::move(fs));
  d.labels.resize(static_cast<std::size_t>(count));
  std::int64_t max_label = 0;
  for (std::int64_t i = 0; i < count; ++i) {
    d.labels[static_cast<std::size_t>(i)] = lraw[static_cast<std::size_t>(i)];
    max_label = std::max<std::int64_t>(max_label, d.labels[static_cast<std::size_t>(i)]);
  }
  d.classes = max_label + 1;
  return d;
}

Dataset load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(msg(path, ": cannot open"));
  std::string line;
  if (!std::getline(f, line)) throw Error(msg(path, ": empty file"));
  if (line.rfind("label", 0) != 0) {
    throw Error(msg(path, ":1: header must start with 'label,', got '", line, "'"));
  }
  std::int64_t dims = -1;
  std::vector<double> fs;
  std::vector<std::int64_t> labels;
  std::int64_t lineno = 1;
  std::int64_t max_label = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> row;
    while (std::getline(ss, field, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw Error(msg(path, ":", lineno, ": '", field, "' is not a number"));
      }
    }
    if (row.size() < 2) throw Error(msg(path, ":", lineno, ": need a label and features"));
    if (dims < 0) dims = static_cast<std::int64_t>(row.size()) - 1;
    if (static_cast<std::int64_t>(row.size()) - 1 != dims) {
      throw Error(msg(path, ":", lineno, ": ", row.size() - 1, " features, expected ", dims));
    }
    const double lab = row[0];
    if (lab < 0 || lab != std::floor(lab)) {
      throw Error(msg(path, ":", lineno, ": label ", lab, " is not a non-negative integer"));
    }
    labels.push_back(static_cast<std::int64_t>(lab));
    max_label = std::max(max_label, labels.back());
    fs.insert(fs.end(), row.begin() + 1, row.end());
  }
  if (labels.empty()) throw Error(msg(path, ": no data rows"));
  Dataset d;
  d.features = Tensor({static_cast<std::int64_t>(labels.size()), dims}, std::move(fs));
  d.labels = std::move(labels);
  d.classes = max_label + 1;
  return d;
}

DataBundle load_data(const std::string& spec, std::uint64_t seed) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw ConfigError(msg("data spec '", spec,
                          "' has no source prefix (spiral:|blobs:|csv:|idx:)"));
  }
  const std::string kind = spec.substr(0, colon);
  const auto kv = parse_kv(spec.substr(colon + 1), spec);
  DataBundle b;
  if (kind == "spiral" || kind == "blobs") {
    const auto train_n = want_int(kv, "train", -1, spec);
    const auto test_n = want_int(kv, "test", 0, spec);
    const auto classes = want_int(kv, "classes", 3, spec);
    if (kind == "spiral") {
      b.train = make_spiral(train_n, classes, derive_seed(seed, 101));
      if (test_n > 0) b.test = make_spiral(test_n, classes, derive_seed(seed, 102));
    } else {
      const auto dim = want_int(kv, "dim", 2, spec);
      b.train = make_blobs(train_n, classes, dim, derive_seed(seed, 101));
      if (test_n > 0) b.test = make_blobs(test_n, classes, dim, derive_seed(seed, 102));
    }
  } else if (kind == "csv") {
    b.train = load_csv(want_str(kv, "train", spec));
    if (kv.count("test")) b.test = load_csv(kv.at("test"));
  } else if (kind == "idx") {
    b.train = load_idx(want_str(kv, "train_images", spec), want_str(kv, "train_labels", spec));
    if (kv.count("test_images")) {
      b.test = load_idx(want_str(kv, "test_images", spec), want_str(kv, "test_labels", spec));
    }
  } else {
    throw ConfigError(msg("data spec '", spec, "': unknown source '", kind, "'"));
  }
  if (b.test.n() > 0 && b.test.classes < b.train.classes) b.test.classes = b.train.classes;
  b.train.shuffle(derive_seed(seed, 103));
  return b;
}

}  // namespace laminar

// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mata/error.hpp"
#include "mata/random.hpp"
#include "mata/tensor.hpp"

namespace mata::data {

struct EmbeddingRecord {
  std::string sample_id;
  int label = 0;
  std::vector<float> vector;

  friend bool operator==(const EmbeddingRecord& a, const EmbeddingRecord& b) {
    if (a.sample_id != b.sample_id || a.label != b.label || a.vector.size() != b.vector.size()) return false;
    // Bitwise, so NaN payloads and signed zeros compare as stored.
    return a.vector.empty() ||
           std::memcmp(a.vector.data(), b.vector.data(), a.vector.size() * sizeof(float)) == 0;
  }
};

struct EmbeddingDataset {
  std::string dataset_name;
  std::string model_name;
  std::size_t dim = 0;
  std::vector<std::string> label_names;
  std::vector<EmbeddingRecord> records;

  std::size_t num_classes() const { return label_names.size(); }

  /// Lists every invariant violation; empty when the dataset is valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (dim == 0) out.push_back("dim must be positive");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      const std::string where = "record " + std::to_string(i) + " ('" + r.sample_id + "')";
      if (r.sample_id.empty()) out.push_back(where + ": empty sample id");
      if (!seen.insert(r.sample_id).second) out.push_back(where + ": duplicate sample id");
      if (r.label < 0 || static_cast<std::size_t>(r.label) >= label_names.size())
        out.push_back(where + ": label " + std::to_string(r.label) + " has no label name");
      if (r.vector.size() != dim)
        out.push_back(where + ": vector length " + std::to_string(r.vector.size()) + " != dim " +
                      std::to_string(dim));
      if (!std::all_of(r.vector.begin(), r.vector.end(), [](float v) { return std::isfinite(v); }))
        out.push_back(where + ": non-finite value");
    }
    return out;
  }

  void validate() const {
    auto v = violations();
    if (!v.empty()) throw DataError("dataset '" + dataset_name + "': " + v.front());
  }

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

/// On-disk layout: `<base>.manifest.json` and `<base>.emb`.
struct DatasetPaths {
  std::filesystem::path manifest;
  std::filesystem::path binary;
};

/// Accepts a base path, or a path ending in `.manifest.json` or `.emb`.
inline DatasetPaths dataset_paths(const std::filesystem::path& path) {
  std::string s = path.string();
  for (const std::string suffix : {".manifest.json", ".emb"})
    if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
      s.resize(s.size() - suffix.size());
      break;
    }
  return {s + ".manifest.json", s + ".emb"};
}

inline constexpr char emb_magic[4] = {'E', 'M', 'B', '1'};
inline constexpr std::uint32_t emb_version = 1;
inline constexpr std::size_t emb_header_bytes = 20;

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

/// Encodes the `.emb` payload for `ds` (header plus rows in record order).
inline std::string encode_binary(const EmbeddingDataset& ds) {
  std::string out(emb_magic, 4);
  detail::put_le<std::uint32_t>(out, emb_version);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim));
  detail::put_le<std::uint64_t>(out, ds.records.size());
  out.reserve(emb_header_bytes + ds.records.size() * ds.dim * 4);
  for (const auto& r : ds.records)
    for (float v : r.vector) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline std::string encode_manifest(const EmbeddingDataset& ds) {
  nlohmann::ordered_json j;
  j["datasetName"] = ds.dataset_name;
  j["modelName"] = ds.model_name;
  j["dim"] = ds.dim;
  j["labelNames"] = ds.label_names;
  auto recs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    recs.push_back({{"sampleId", ds.records[i].sample_id}, {"labelIndex", ds.records[i].label}, {"rowIndex", i}});
  j["records"] = recs;
  return j.dump(1) + "\n";
}

inline void write_dataset(const EmbeddingDataset& ds, const std::filesystem::path& base) {
  ds.validate();
  const auto paths = dataset_paths(base);
  if (paths.manifest.has_parent_path()) std::filesystem::create_directories(paths.manifest.parent_path());
  const std::pair<std::filesystem::path, std::string> files[] = {{paths.manifest, encode_manifest(ds)},
                                                                    {paths.binary, encode_binary(ds)}};
  for (const auto& [p, bytes] : files) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("cannot write " + p.string());
  }
}

/// Reads and validates a dataset. Throws FormatError for structural problems
/// (magic, version, dim, row counts, truncation) and DataError for invalid
/// content (duplicate ids, labels without names) unless `validate` is false.
inline EmbeddingDataset read_dataset(const std::filesystem::path& path, bool validate = true) {
  const auto paths = dataset_paths(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(paths.manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + paths.manifest.string() + ": " + e.what());
  }
  EmbeddingDataset ds;
  std::vector<std::uint64_t> rows;
  try {
    ds.dataset_name = j.at("datasetName").get<std::string>();
    ds.model_name = j.at("modelName").get<std::string>();
    ds.dim = j.at("dim").get<std::size_t>();
    ds.label_names = j.at("labelNames").get<std::vector<std::string>>();
    for (const auto& r : j.at("records")) {
      ds.records.push_back({r.at("sampleId").get<std::string>(), r.at("labelIndex").get<int>(), {}});
      rows.push_back(r.at("rowIndex").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + paths.manifest.string() + ": " + e.what());
  }

  const std::string bin = detail::read_file(paths.binary);
  const auto* p = reinterpret_cast<const unsigned char*>(bin.data());
  if (bin.size() < emb_header_bytes) throw FormatError("binary " + paths.binary.string() + ": truncated header");
  if (std::memcmp(p, emb_magic, 4) != 0) throw FormatError("binary " + paths.binary.string() + ": bad magic");
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != emb_version)
    throw FormatError("binary " + paths.binary.string() + ": unsupported version " + std::to_string(version));
  const auto dim = detail::get_le<std::uint32_t>(p + 8);
  const auto count = detail::get_le<std::uint64_t>(p + 12);
  if (dim != ds.dim)
    throw FormatError("dim mismatch: manifest says " + std::to_string(ds.dim) + ", binary says " +
                      std::to_string(dim));
  if (count != ds.records.size())
    throw FormatError("row count mismatch: manifest lists " + std::to_string(ds.records.size()) +
                      " records, binary header says " + std::to_string(count));
  const std::uint64_t expected = emb_header_bytes + count * dim * 4;
  if (bin.size() != expected)
    throw FormatError("row count mismatch: binary payload is " + std::to_string(bin.size()) + " bytes, expected " +
                      std::to_string(expected) + " for " + std::to_string(count) + " rows");
  std::vector<bool> used(count, false);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (rows[i] >= count || used[rows[i]])
      throw FormatError("record '" + ds.records[i].sample_id + "': invalid or repeated rowIndex " +
                        std::to_string(rows[i]));
    used[rows[i]] = true;
    auto& v = ds.records[i].vector;
    v.resize(dim);
    const unsigned char* row = p + emb_header_bytes + rows[i] * dim * 4;
    for (std::size_t c = 0; c < dim; ++c) v[c] = std::bit_cast<float>(detail::get_le<std::uint32_t>(row + 4 * c));
  }
  if (validate) ds.validate();
  return ds;
}

/// FNV-1a 64 of the `.emb` bytes followed by the manifest bytes.
inline std::uint64_t checksum(const std::filesystem::path& path) {
  const auto paths = dataset_paths(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : {paths.binary, paths.manifest})
    for (unsigned char c : detail::read_file(f)) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  return h;
}

/// Two datasets joined on sample id. Position i refers to the same sample
/// (same id and label) on both sides.
struct PairedView {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::size_t> rows_a;
  std::vector<std::size_t> rows_b;
  std::size_t dropped_a = 0;
  std::size_t dropped_b = 0;
};

/// Intersection of sample ids in the order of `a`.
inline PairedView align_pair(const EmbeddingDataset& a, const EmbeddingDataset& b) {
  if (a.label_names != b.label_names)
    throw DataError("align_pair: label vocabularies differ between '" + a.model_name + "' and '" + b.model_name + "'");
  std::unordered_map<std::string, std::size_t> index_b;
  for (std::size_t j = 0; j < b.records.size(); ++j) index_b.emplace(b.records[j].sample_id, j);
  PairedView view;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    auto it = index_b.find(a.records[i].sample_id);
    if (it == index_b.end()) continue;
    if (b.records[it->second].label != a.records[i].label)
      throw DataError("align_pair: sample '" + a.records[i].sample_id + "' has label " +
                      std::to_string(a.records[i].label) + " in one source and " +
                      std::to_string(b.records[it->second].label) + " in the other");
    view.ids.push_back(a.records[i].sample_id);
    view.labels.push_back(a.records[i].label);
    view.rows_a.push_back(i);
    view.rows_b.push_back(it->second);
  }
  if (view.ids.empty()) throw DataError("align_pair: no overlap between sample ids");
  view.dropped_a = a.records.size() - view.ids.size();
  view.dropped_b = b.records.size() - view.ids.size();
  return view;
}

/// The matrix form consumed by training: aligned ids and labels with one or
/// two feature matrices.
struct SampleTable {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> label_names;
  Tensor<float> x1;
  /// Empty for single-source tables.
  Tensor<float> x2;

  std::size_t size() const { return ids.size(); }
  std::size_t num_classes() const { return label_names.size(); }
  bool paired() const { return !x2.empty(); }

  /// Single-source view of column `source` (0 or 1) of a paired table.
  SampleTable single(int source) const {
    SampleTable t{ids, labels, label_names, source == 0 ? x1 : x2, {}};
    return t;
  }
};

inline SampleTable make_table(const EmbeddingDataset& ds) {
  SampleTable t;
  t.label_names = ds.label_names;
  if (ds.records.empty()) throw DataError("dataset '" + ds.dataset_name + "' is empty");
  t.x1 = Tensor<float>({ds.records.size(), ds.dim});
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    t.ids.push_back(ds.records[i].sample_id);
    t.labels.push_back(ds.records[i].label);
    std::copy(ds.records[i].vector.begin(), ds.records[i].vector.end(), t.x1.data() + i * ds.dim);
  }
  return t;
}

inline SampleTable make_table(const EmbeddingDataset& a, const EmbeddingDataset& b, const PairedView& view) {
  SampleTable t;
  t.ids = view.ids;
  t.labels = view.labels;
  t.label_names = a.label_names;
  t.x1 = Tensor<float>({view.ids.size(), a.dim});
  t.x2 = Tensor<float>({view.ids.size(), b.dim});
  for (std::size_t i = 0; i < view.ids.size(); ++i) {
    const auto& va = a.records[view.rows_a[i]].vector;
    const auto& vb = b.records[view.rows_b[i]].vector;
    std::copy(va.begin(), va.end(), t.x1.data() + i * a.dim);
    std::copy(vb.begin(), vb.end(), t.x2.data() + i * b.dim);
  }
  return t;
}

/// k folds of sample indices (into the table the split was made from).
struct FoldSplit {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;

  /// Ids per fold, for audits across tables.
  std::vector<std::vector<std::string>> fold_ids(const std::vector<std::string>& ids) const {
    std::vector<std::vector<std::string>> out;
    for (const auto& f : folds) {
      out.emplace_back();
      for (std::size_t i : f) out.back().push_back(ids.at(i));
    }
    return out;
  }
};

/// Stratified split: within each class the samples are shuffled with a
/// seeded stream and dealt round-robin to the folds, continuing the deal
/// across classes so fold sizes stay balanced.
inline FoldSplit stratified_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  FoldSplit split{k, seed, std::vector<std::vector<std::size_t>>(k)};
  std::size_t next = 0;
  const RandomSource root(seed, "kfold");
  for (auto& [label, members] : by_class) {
    if (members.size() < k)
      throw DataError("stratified_kfold: class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                      " samples, fewer than k = " + std::to_string(k));
    RandomSource rng = root.derive("class" + std::to_string(label));
    rng.shuffle(members);
    for (std::size_t i : members) split.folds[next++ % k].push_back(i);
  }
  for (auto& f : split.folds) std::sort(f.begin(), f.end());
  return split;
}

/// Complementary two-modality generator. Each modality draws one Gaussian
/// mean per class, except that each group listed for the modality shares a
/// single mean, so those classes are indistinguishable in that modality.
struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 100;
  std::size_t dim1 = 64;
  std::size_t dim2 = 64;
  double noise_sigma = 1.0;
  std::vector<std::vector<int>> merged1 = {{0, 1}};
  std::vector<std::vector<int>> merged2 = {{2, 3}};
  std::uint64_t seed = 7;

  void validate() const {
    if (num_classes < 2) throw ConfigError("synthetic: numClasses must be >= 2");
    if (samples_per_class < 1 || dim1 < 1 || dim2 < 1) throw ConfigError("synthetic: sizes must be positive");
    if (!(noise_sigma > 0.0)) throw ConfigError("synthetic: noise sigma must be > 0");
    for (const auto* groups : {&merged1, &merged2})
      for (const auto& g : *groups)
        for (int c : g)
          if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
            throw ConfigError("synthetic: merge group references unknown class " + std::to_string(c));
  }
};

inline std::pair<EmbeddingDataset, EmbeddingDataset> synthesize_pair(const SyntheticSpec& spec) {
  spec.validate();
  const RandomSource root(spec.seed, "synthetic");
  auto build = [&](int modality, std::size_t dim, const std::vector<std::vector<int>>& groups) {
    const std::string tag = "modality" + std::to_string(modality);
    std::vector<int> owner(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) owner[c] = static_cast<int>(c);
    for (const auto& g : groups)
      for (int c : g) owner[c] = g.front();
    RandomSource mean_rng = root.derive(tag + "/means");
    std::vector<std::vector<float>> means(spec.num_classes, std::vector<float>(dim));
    for (std::size_t c = 0; c < spec.num_classes; ++c)
      for (float& v : means[c]) v = static_cast<float>(mean_rng.normal());
    RandomSource noise = root.derive(tag + "/noise");
    EmbeddingDataset ds{"synthetic", tag, dim, {}, {}};
    for (std::size_t c = 0; c < spec.num_classes; ++c) ds.label_names.push_back("class" + std::to_string(c));
    const std::size_t n = spec.num_classes * spec.samples_per_class;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % spec.num_classes);
      char id[32];
      std::snprintf(id, sizeof id, "syn%06zu", i);
      EmbeddingRecord r{id, label, std::vector<float>(dim)};
      const auto& mu = means[owner[label]];
      for (std::size_t d = 0; d < dim; ++d) r.vector[d] = mu[d] + static_cast<float>(spec.noise_sigma * noise.normal());
      ds.records.push_back(std::move(r));
    }
    return ds;
  };
  return {build(1, spec.dim1, spec.merged1), build(2, spec.dim2, spec.merged2)};
}

/// Split-half accuracy of the nearest-class-mean rule on `x`: within each
/// class, alternate samples fit the means and the rest are scored (ties to
/// the lowest class index).
inline double nearest_mean_accuracy(const Tensor<float>& x, const std::vector<int>& labels, std::size_t classes) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < 2) throw DataError("nearest_mean_accuracy: need at least two rows");
  std::vector<std::vector<double>> mean(classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(classes, 0), seen(classes, 0);
  std::vector<bool> fit(n);
  for (std::size_t i = 0; i < n; ++i) fit[i] = seen[labels[i]]++ % 2 == 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!fit[i]) continue;
    ++count[labels[i]];
    for (std::size_t c = 0; c < d; ++c) mean[labels[i]][c] += x(i, c);
  }
  for (std::size_t k = 0; k < classes; ++k)
    for (double& v : mean[k]) v /= static_cast<double>(std::max<std::size_t>(count[k], 1));
  std::size_t correct = 0, scored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (fit[i]) continue;
    ++scored;
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < classes; ++k) {
      if (!count[k]) continue;
      double dist = 0;
      for (std::size_t c = 0; c < d; ++c) dist += (x(i, c) - mean[k][c]) * (x(i, c) - mean[k][c]);
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    correct += static_cast<int>(best) == labels[i];
  }
  if (scored == 0) throw DataError("nearest_mean_accuracy: every class needs two samples");
  return static_cast<double>(correct) / static_cast<double>(scored);
}

}  // namespace mata::data

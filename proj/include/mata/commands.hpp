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

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mata/dataset.hpp"
#include "mata/report.hpp"
#include "mata/serialize.hpp"
#include "mata/training.hpp"

namespace mata::cli {

/// Process exit codes.
enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,
  exit_config = 2,
  exit_data = 3,
  exit_training = 4,
  exit_internal = 5,
};

class UsageError : public Error {
 public:
  using Error::Error;
};

/// One experiment row: a variant over one (individual) or two (fusion)
/// named sources.
struct RunEntry {
  std::string name;
  Variant variant = Variant::MATA;
  std::vector<std::string> sources;
};

struct ExperimentConfig {
  std::filesystem::path output;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  bool checkpoints = true;
  std::map<std::string, std::filesystem::path> sources;
  std::vector<RunEntry> runs;
  ot::SinkhornConfig sinkhorn;
  eval::TrainConfig train;
};

namespace detail {

inline void reject_unknown(const Json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> k(known.begin(), known.end());
  for (const auto& [key, v] : j.items())
    if (!k.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename V>
V field(const Json& j, const char* key, const std::string& where, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline RunEntry parse_run(const Json& j, const std::string& where) {
  reject_unknown(j, where, {"name", "variant", "sources"});
  RunEntry r;
  if (!j.contains("variant")) throw ConfigError(where + ": missing 'variant'");
  r.variant = parse_variant(field<std::string>(j, "variant", where, ""));
  r.sources = field<std::vector<std::string>>(j, "sources", where, {});
  const std::size_t need = is_fusion(r.variant) ? 2 : 1;
  if (r.sources.size() != need)
    throw ConfigError(where + ": variant '" + variant_name(r.variant) + "' needs " + std::to_string(need) +
                      " source(s), got " + std::to_string(r.sources.size()));
  std::string fallback = variant_name(r.variant);
  for (const auto& s : r.sources) fallback += "_" + s;
  r.name = field<std::string>(j, "name", where, fallback);
  if (r.name.empty()) throw ConfigError(where + ": empty run name");
  return r;
}

/// Sets `path` (dot separated, numeric parts index arrays) to `value`,
/// parsed as JSON when it is valid JSON and taken as a string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw UsageError("--set: empty path component in '" + path + "'");
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw UsageError("--set: '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw UsageError("--set: index " + key + " out of range in '" + path + "'");
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = Json::object();
      if (!node->is_object()) throw UsageError("--set: '" + path + "' descends into a scalar");
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

}  // namespace detail

/// Parses an experiment document. Relative source and output paths resolve
/// against `base`. A single "run" object is accepted in place of "runs".
inline ExperimentConfig parse_config(const Json& j, const std::filesystem::path& base = {}) {
  detail::reject_unknown(j, "config",
                         {"output", "seed", "folds", "checkpoints", "sources", "run", "runs", "sinkhorn", "train"});
  ExperimentConfig c;
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() || base.empty() ? p : base / p; };
  if (!j.contains("output")) throw ConfigError("config: missing 'output'");
  c.output = resolve(detail::field<std::string>(j, "output", "config", ""));
  c.seed = detail::field<std::uint64_t>(j, "seed", "config", 0);
  c.folds = detail::field<std::size_t>(j, "folds", "config", 5);
  if (c.folds < 2) throw ConfigError("config.folds: must be >= 2");
  c.checkpoints = detail::field<bool>(j, "checkpoints", "config", true);
  if (!j.contains("sources") || !j["sources"].is_object() || j["sources"].empty())
    throw ConfigError("config: 'sources' must map names to dataset paths");
  for (const auto& [name, p] : j["sources"].items()) {
    if (!p.is_string()) throw ConfigError("config.sources." + name + ": expected a path");
    c.sources[name] = resolve(p.get<std::string>());
  }
  if (j.contains("run") && j.contains("runs")) throw ConfigError("config: give either 'run' or 'runs', not both");
  if (j.contains("run")) {
    c.runs.push_back(detail::parse_run(j["run"], "config.run"));
  } else if (j.contains("runs") && j["runs"].is_array()) {
    for (std::size_t i = 0; i < j["runs"].size(); ++i)
      c.runs.push_back(detail::parse_run(j["runs"][i], "config.runs[" + std::to_string(i) + "]"));
  }
  if (c.runs.empty()) throw ConfigError("config: no runs listed");
  std::set<std::string> names, stems;
  for (const auto& r : c.runs) {
    if (!names.insert(r.name).second) throw ConfigError("config: duplicate run name '" + r.name + "'");
    if (!stems.insert(report::file_stem(r.name)).second)
      throw ConfigError("config: run names collide as file names: '" + r.name + "'");
    for (const auto& s : r.sources)
      if (!c.sources.count(s)) throw ConfigError("run '" + r.name + "': unknown source '" + s + "'");
  }
  if (j.contains("sinkhorn")) {
    detail::reject_unknown(j["sinkhorn"], "config.sinkhorn", {"epsilon", "maxIterations", "tolerance", "logDomain"});
    c.sinkhorn = j["sinkhorn"].get<ot::SinkhornConfig>();
  }
  c.sinkhorn.validate();
  if (j.contains("train")) {
    const Json& t = j["train"];
    const std::string w = "config.train";
    detail::reject_unknown(t, w,
                           {"epochs", "learningRate", "batchSize", "earlyStopping", "earlyStopPatience",
                            "validationFraction", "dropoutRate"});
    auto& tc = c.train;
    tc.epochs = detail::field(t, "epochs", w, tc.epochs);
    tc.learning_rate = detail::field(t, "learningRate", w, tc.learning_rate);
    tc.batch_size = detail::field(t, "batchSize", w, tc.batch_size);
    tc.early_stopping = detail::field(t, "earlyStopping", w, tc.early_stopping);
    tc.patience = detail::field(t, "earlyStopPatience", w, tc.patience);
    tc.validation_fraction = detail::field(t, "validationFraction", w, tc.validation_fraction);
    tc.dropout_rate = detail::field(t, "dropoutRate", w, tc.dropout_rate);
  }
  c.train.seed = c.seed;
  c.train.validate();
  for (const auto& [name, p] : c.sources) {
    const auto paths = data::dataset_paths(p);
    if (!std::filesystem::exists(paths.manifest) || !std::filesystem::exists(paths.binary))
      throw ConfigError("source '" + name + "': no dataset at " + p.string());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config " + path.string() + ": invalid JSON");
  for (const auto& o : overrides) detail::apply_override(doc, o);
  return parse_config(doc, path.parent_path());
}

/// Worker count: MATA_THREADS when set, else the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("MATA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("MATA_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// FNV-1a over the fold id lists, as the shared-split audit key.
inline std::uint64_t fold_hash(const std::vector<std::vector<std::string>>& folds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& f : folds) {
    for (const auto& id : f) {
      for (unsigned char c : id) mix(c);
      mix(0);
    }
    mix(0xff);
  }
  return h;
}

/// Everything an experiment needs once the datasets are loaded: one table
/// per run, all over the same ordered sample ids, and the shared split.
struct Prepared {
  std::vector<std::string> ids;
  std::vector<data::SampleTable> tables;
  data::FoldSplit split;
  std::uint64_t split_hash = 0;
};

inline Prepared prepare(const ExperimentConfig& cfg, std::ostream& log) {
  std::map<std::string, data::EmbeddingDataset> loaded;
  std::vector<std::string> order;
  for (const auto& r : cfg.runs)
    for (const auto& s : r.sources)
      if (!loaded.count(s)) {
        loaded.emplace(s, data::read_dataset(cfg.sources.at(s)));
        order.push_back(s);
      }

  // Common ids: intersection over every referenced source, in the order of
  // the first one.
  const auto& first = loaded.at(order.front());
  std::set<std::string> keep;
  for (const auto& rec : first.records) keep.insert(rec.sample_id);
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto view = data::align_pair(first, loaded.at(order[i]));
    log << "align " << order.front() << " + " << order[i] << ": " << view.ids.size() << " paired, dropped "
        << view.dropped_a << " / " << view.dropped_b << "\n";
    std::set<std::string> both(view.ids.begin(), view.ids.end());
    std::erase_if(keep, [&](const std::string& id) { return !both.count(id); });
  }
  if (keep.empty()) throw DataError("sources share no sample ids");

  auto restrict = [&](const data::EmbeddingDataset& ds) {
    data::EmbeddingDataset out = ds;
    std::map<std::string, const data::EmbeddingRecord*> by_id;
    for (const auto& rec : ds.records) by_id[rec.sample_id] = &rec;
    out.records.clear();
    for (const auto& rec : first.records)
      if (keep.count(rec.sample_id)) out.records.push_back(*by_id.at(rec.sample_id));
    return out;
  };
  std::map<std::string, data::EmbeddingDataset> common;
  for (const auto& s : order) common.emplace(s, restrict(loaded.at(s)));

  Prepared p;
  for (const auto& rec : common.at(order.front()).records) p.ids.push_back(rec.sample_id);
  for (const auto& r : cfg.runs) {
    const auto& a = common.at(r.sources[0]);
    if (r.sources.size() == 1) {
      p.tables.push_back(data::make_table(a));
    } else {
      const auto& b = common.at(r.sources[1]);
      p.tables.push_back(data::make_table(a, b, data::align_pair(a, b)));
    }
  }
  p.split = data::stratified_kfold(p.tables.front().labels, cfg.folds, cfg.seed);
  p.split_hash = fold_hash(p.split.fold_ids(p.ids));
  for (std::size_t i = 0; i < p.tables.size(); ++i) {
    if (fold_hash(p.split.fold_ids(p.tables[i].ids)) != p.split_hash)
      throw Error("internal: fold assignment for run '" + cfg.runs[i].name + "' differs from the shared split");
  }
  return p;
}

struct Outcome {
  std::vector<eval::RunResult> results;
  std::vector<std::filesystem::path> files;
  std::uint64_t split_hash = 0;
};

/// Runs every configured run on the shared split and writes the reports.
inline Outcome execute(const ExperimentConfig& cfg, std::ostream& log, std::size_t workers,
                       const std::string& sinkhorn_log = {}) {
  Prepared prep = prepare(cfg, log);
  std::unique_ptr<ot::SolveLog> solve_log;
  if (!sinkhorn_log.empty()) solve_log = std::make_unique<ot::SolveLog>(sinkhorn_log);
  std::vector<eval::RunPlan> plans;
  for (std::size_t i = 0; i < cfg.runs.size(); ++i) {
    const auto& r = cfg.runs[i];
    const auto& t = prep.tables[i];
    ModelSpec spec;
    spec.variant = r.variant;
    spec.dim1 = t.x1.dim(1);
    spec.dim2 = t.paired() ? t.x2.dim(1) : spec.dim1;
    spec.num_classes = t.num_classes();
    spec.sinkhorn = cfg.sinkhorn;
    spec.dropout_rate = cfg.train.dropout_rate;
    spec.seed = cfg.seed;
    plans.push_back({r.name, spec, cfg.train, &t, r.sources, cfg.checkpoints, solve_log.get()});
  }
  log << prep.ids.size() << " samples, " << cfg.folds << " folds, " << plans.size() << " run(s), " << workers
      << " worker(s)\n";
  Outcome out;
  out.split_hash = prep.split_hash;
  out.results = eval::run_experiments(plans, prep.split, workers);
  out.files = report::write_all(cfg.output, out.results);
  return out;
}

namespace detail {

inline std::vector<std::vector<int>> parse_groups(const std::string& text) {
  std::vector<std::vector<int>> groups;
  if (text.empty() || text == "none") return groups;
  std::stringstream ss(text);
  std::string group;
  while (std::getline(ss, group, ';')) {
    std::vector<int> g;
    std::stringstream gs(group);
    std::string item;
    while (std::getline(gs, item, ',')) {
      try {
        std::size_t used = 0;
        g.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw UsageError("merge groups: '" + item + "' is not a class index");
      }
    }
    if (g.size() < 2) throw UsageError("merge groups need at least two classes each: '" + group + "'");
    groups.push_back(g);
  }
  return groups;
}

inline Tensor<float> hstack(const Tensor<float>& a, const Tensor<float>& b) {
  Tensor<float> out({a.dim(0), a.dim(1) + b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    std::copy_n(a.data() + i * a.dim(1), a.dim(1), out.data() + i * out.dim(1));
    std::copy_n(b.data() + i * b.dim(1), b.dim(1), out.data() + i * out.dim(1) + a.dim(1));
  }
  return out;
}

inline std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

/// One-line JSON diagnostic for stderr.
inline std::string diagnostic(const char* kind, int code, const std::string& message) {
  return Json{{"level", "error"}, {"kind", kind}, {"exit", code}, {"message", message}}.dump();
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Embedding fusion with optimal transport and attention"};
  app.require_subcommand(1);

  data::SyntheticSpec syn;
  std::string syn_dir = ".", syn_name = "synthetic", merge1 = "0,1", merge2 = "2,3";
  auto* synth = app.add_subcommand("synth", "write a complementary synthetic dataset pair");
  synth->add_option("--out", syn_dir, "output directory");
  synth->add_option("--name", syn_name, "file name prefix");
  synth->add_option("--classes", syn.num_classes, "number of classes");
  synth->add_option("--per-class", syn.samples_per_class, "samples per class");
  synth->add_option("--dim1", syn.dim1, "modality 1 width");
  synth->add_option("--dim2", syn.dim2, "modality 2 width");
  synth->add_option("--sigma", syn.noise_sigma, "noise standard deviation");
  synth->add_option("--merge1", merge1, "class groups sharing a mean in modality 1, e.g. 0,1;4,5 (or none)");
  synth->add_option("--merge2", merge2, "class groups sharing a mean in modality 2");
  synth->add_option("--seed", syn.seed, "generator seed");

  std::string config_path, sinkhorn_log;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "train and evaluate one configured run over k folds");
  auto* compare = app.add_subcommand("compare", "train and evaluate several runs on one shared split");
  for (auto* sub : {run, compare}) {
    sub->add_option("config", config_path, "experiment JSON file")->required();
    sub->add_option("--set", overrides, "override a config value, key.path=value (repeatable)");
    sub->add_option("--sinkhorn-log", sinkhorn_log, "append one JSON line per Sinkhorn solve to this file");
  }

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "summarise and validate a dataset");
  inspect->add_option("dataset", inspect_path, "dataset base path, .manifest.json or .emb")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << diagnostic("usage", exit_usage, e.what()) << "\n";
    return exit_usage;
  }

  try {
    if (*synth) {
      try {
        syn.merged1 = detail::parse_groups(merge1);
        syn.merged2 = detail::parse_groups(merge2);
        syn.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      auto [a, b] = data::synthesize_pair(syn);
      const std::filesystem::path dir(syn_dir);
      for (const auto& [ds, suffix] : {std::pair{&a, "_m1"}, std::pair{&b, "_m2"}}) {
        const auto base = dir / (syn_name + suffix);
        data::write_dataset(*ds, base);
        out << "wrote " << base.string() << " (" << ds->records.size() << " x " << ds->dim << ", checksum "
            << detail::hex(data::checksum(base)) << ")\n";
      }
      const auto t = data::make_table(a, b, data::align_pair(a, b));
      const std::size_t c = syn.num_classes;
      char line[160];
      std::snprintf(line, sizeof line, "nearest-mean accuracy: modality1 %s, modality2 %s, joint %s\n",
                    report::percent(data::nearest_mean_accuracy(t.x1, t.labels, c)).c_str(),
                    report::percent(data::nearest_mean_accuracy(t.x2, t.labels, c)).c_str(),
                    report::percent(data::nearest_mean_accuracy(detail::hstack(t.x1, t.x2), t.labels, c)).c_str());
      out << line;
      return exit_ok;
    }

    if (*inspect) {
      const auto ds = data::read_dataset(inspect_path, false);
      out << "dataset   " << ds.dataset_name << "\n"
          << "model     " << ds.model_name << "\n"
          << "dim       " << ds.dim << "\n"
          << "records   " << ds.records.size() << "\n"
          << "classes   " << ds.num_classes() << "\n"
          << "checksum  " << detail::hex(data::checksum(inspect_path)) << "\n";
      std::vector<std::size_t> hist(ds.num_classes(), 0);
      for (const auto& r : ds.records)
        if (r.label >= 0 && static_cast<std::size_t>(r.label) < hist.size()) ++hist[r.label];
      for (std::size_t c = 0; c < hist.size(); ++c) out << "  " << c << " " << ds.label_names[c] << ": " << hist[c] << "\n";
      const auto problems = ds.violations();
      if (!problems.empty()) {
        for (const auto& p : problems) out << "violation: " << p << "\n";
        throw DataError(std::to_string(problems.size()) + " invariant violation(s), first: " + problems.front());
      }
      out << "all checks passed\n";
      return exit_ok;
    }

    const bool is_run = static_cast<bool>(*run);
    ExperimentConfig cfg = load_config(config_path, overrides);
    if (is_run && cfg.runs.size() != 1)
      throw ConfigError("run expects exactly one run in the config (found " + std::to_string(cfg.runs.size()) +
                        "); use compare");
    const auto t0 = std::chrono::steady_clock::now();
    Outcome result = execute(cfg, out, worker_count(), sinkhorn_log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "\n" << report::text(result.results) << "\n";
    for (const auto& r : result.results) {
      char line[200];
      std::snprintf(line, sizeof line, "%s: %.1f s of fold training\n", r.name.c_str(), r.wall_seconds);
      out << line;
    }
    char line[160];
    std::snprintf(line, sizeof line, "split %s, total %.1f s, reports in %s\n", detail::hex(result.split_hash).c_str(),
                  secs, cfg.output.string().c_str());
    out << line;
    return exit_ok;
  } catch (const UsageError& e) {
    err << diagnostic("usage", exit_usage, e.what()) << "\n";
    return exit_usage;
  } catch (const ConfigError& e) {
    err << diagnostic("config", exit_config, e.what()) << "\n";
    return exit_config;
  } catch (const DataError& e) {
    err << diagnostic("data", exit_data, e.what()) << "\n";
    return exit_data;
  } catch (const FormatError& e) {
    err << diagnostic("data", exit_data, e.what()) << "\n";
    return exit_data;
  } catch (const TrainingError& e) {
    err << diagnostic("training", exit_training, e.what()) << "\n";
    return exit_training;
  } catch (const NumericError& e) {
    err << diagnostic("training", exit_training, e.what()) << "\n";
    return exit_training;
  } catch (const std::exception& e) {
    err << diagnostic("internal", exit_internal, e.what()) << "\n";
    return exit_internal;
  }
}

}  // namespace mata::cli

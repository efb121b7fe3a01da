//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//


// Subcommands of the command-line driver. Each reads a RunConfig, writes
// into an output directory and never overwrites files unless asked to.
// Result rows carry the config hash, the seed and the content id of the
// checkpoint they came from.
//
//   results.csv: experiment,variant,method,scenario,population,run,metric,
//                value,config_hash,seed,checkpoint_id

#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "meterlink/attack/experiment.hpp"
#include "meterlink/baselines/baselines.hpp"
#include "meterlink/cli/config.hpp"
#include "meterlink/core/preprocess.hpp"
#include "meterlink/nk/checkpoint.hpp"
#include "meterlink/synth/synthgen.hpp"
#include "meterlink/train/grid.hpp"

namespace meterlink::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigExit = 2, kDataExit = 3, kNumericalExit = 4 };

struct Invocation {
  std::string command;
  RunConfig config;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  fs::path out;
  bool overwrite = false;
  std::ostream* log = &std::cout;
};

// Maps an exception to the driver's exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigExit;
  if (dynamic_cast<const DataError*>(&e)) return kDataExit;
  if (dynamic_cast<const NumericalError*>(&e)) return kNumericalExit;
  return kFailure;
}

// ---------------------------------------------------------------------------
// Shared plumbing

class OutputDir {
 public:
  OutputDir(fs::path dir, bool overwrite) : dir_(std::move(dir)), overwrite_(overwrite) {
    if (dir_.empty()) throw ConfigError("an output directory is required (--out)");
    fs::create_directories(dir_);
  }

  // Claims a file name; existing files are an error without --overwrite.
  fs::path claim(const std::string& name) const {
    const fs::path p = dir_ / name;
    if (fs::exists(p) && !overwrite_)
      throw ConfigError("output '" + p.string() + "' exists; pass --overwrite to replace it");
    return p;
  }

  void write(const std::string& name, const std::string& content) const {
    auto out = io::open_output(claim(name));
    out << content;
    if (!out) throw DataError("failed writing '" + (dir_ / name).string() + "'");
  }

 private:
  fs::path dir_;
  bool overwrite_;
};

inline fs::path existing_path(const RunConfig& cfg, const std::string& key) {
  const fs::path p = cfg.require(key);
  if (!fs::exists(p)) throw ConfigError("config key '" + key + "' names a missing path '" + p.string() + "'");
  return p;
}

// Loads a preprocessed readings file onto an hourly grid of whole weeks.
inline Dataset load_dataset(const fs::path& path) {
  const io::RawDataset raw = io::ingest_readings(path);
  SlotGrid grid = infer_grid(raw);
  grid.slots = (grid.slots + kHoursPerWeek - 1) / kHoursPerWeek * kHoursPerWeek;
  PreprocessConfig pc;
  pc.gas_clip_quantile.reset();
  return preprocess(raw, pc, grid);
}

inline std::size_t weeks_of(const Dataset& ds) { return ds.grid().slots / kHoursPerWeek; }

// The users seen in training: all of them, or `count` drawn with `seed`.
inline std::vector<std::string> choose_aux_users(const std::vector<std::string>& users, std::size_t count,
                                                 std::uint64_t seed) {
  if (count == 0 || count == users.size()) return users;
  if (count > users.size()) throw ConfigError("split.aux_users exceeds the number of users");
  std::vector<std::string> shuffled = users;
  std::seed_seq seq{seed, std::uint64_t{0xa0c5}};
  std::mt19937_64 rng(seq);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.resize(count);
  std::sort(shuffled.begin(), shuffled.end());
  return shuffled;
}

inline std::vector<std::string> complement(const std::vector<std::string>& all, const std::vector<std::string>& part) {
  const std::set<std::string> skip(part.begin(), part.end());
  std::vector<std::string> out;
  for (const auto& u : all)
    if (!skip.count(u)) out.push_back(u);
  return out;
}

inline std::string join(const std::vector<std::string>& items, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? std::string(1, sep) : "") + items[i];
  return out;
}

inline attack::Scenario parse_scenario(const std::string& s) {
  if (s == "I") return attack::Scenario::I;
  if (s == "II") return attack::Scenario::II;
  throw ConfigError("scenario must be I or II, got '" + s + "'");
}

// "none" or a number of significant digits.
inline std::vector<std::optional<RoundingSpec>> parse_rounding(const RunConfig& cfg) {
  std::vector<std::optional<RoundingSpec>> out;
  for (const auto& s : cfg.get_list("attack.rounding", {"none"})) {
    if (s == "none") {
      out.emplace_back();
      continue;
    }
    std::int64_t n = 0;
    if (!io::parse_int(s, n) || n < 1) throw ConfigError("attack.rounding items must be 'none' or positive integers");
    out.push_back(RoundingSpec{static_cast<int>(n)});
  }
  return out;
}

inline std::string rounding_label(const std::optional<RoundingSpec>& r) {
  return r ? std::to_string(r->n) : std::string("none");
}

struct ResultRow {
  std::string experiment, variant, method, scenario;
  std::size_t population = 0;
  std::size_t run = 0;
  std::string metric;
  double value = 0.0;
  std::string checkpoint_id = "-";
};

class ResultTable {
 public:
  ResultTable(std::string config_hash, std::uint64_t seed) : hash_(std::move(config_hash)), seed_(seed) {}

  void add(ResultRow r) { rows_.push_back(std::move(r)); }

  void add_curve(const ResultRow& base, const attack::RankCurve& curve, const std::vector<std::size_t>& ranks) {
    for (std::size_t R : ranks) {
      if (R > curve.size()) continue;
      ResultRow r = base;
      r.metric = "p@" + std::to_string(R);
      r.value = curve.at(R);
      add(r);
    }
  }

  std::string csv() const {
    std::ostringstream out;
    out << "experiment,variant,method,scenario,population,run,metric,value,config_hash,seed,checkpoint_id\n";
    for (const auto& r : rows_)
      out << r.experiment << ',' << r.variant << ',' << r.method << ',' << r.scenario << ',' << r.population << ','
          << r.run << ',' << r.metric << ',' << io::format_double(r.value) << ',' << hash_ << ',' << seed_ << ','
          << r.checkpoint_id << '\n';
    return out.str();
  }

  const std::vector<ResultRow>& rows() const { return rows_; }

 private:
  std::string hash_;
  std::uint64_t seed_;
  std::vector<ResultRow> rows_;
};

// ---------------------------------------------------------------------------
// generate

inline synth::SynthConfig synth_config(const RunConfig& cfg, std::uint64_t seed) {
  synth::SynthConfig sc;
  sc.n_households = cfg.get_size("synth.n_households", sc.n_households);
  sc.n_weeks = cfg.get_size("synth.n_weeks", sc.n_weeks);
  sc.profile_jitter = cfg.get_double("synth.profile_jitter", sc.profile_jitter);
  sc.week_noise = cfg.get_double("synth.week_noise", sc.week_noise);
  sc.ar1_rho = cfg.get_double("synth.ar1_rho", sc.ar1_rho);
  sc.vacation_prob = cfg.get_double("synth.vacation_prob", sc.vacation_prob);
  sc.seasonal_amplitude = cfg.get_double("synth.seasonal_amplitude", sc.seasonal_amplitude);
  sc.timing_jitter = cfg.get_double("synth.timing_jitter", sc.timing_jitter);
  sc.spike_rate = cfg.get_double("synth.spike_rate", sc.spike_rate);
  sc.spike_height = cfg.get_double("synth.spike_height", sc.spike_height);
  sc.utilities = cfg.get_size("synth.utilities", sc.utilities);
  sc.start = cfg.get_int("synth.start", sc.start);
  if (cfg.has("synth.archetype_mix")) {
    const auto mix = cfg.get_doubles("synth.archetype_mix", {});
    if (mix.size() != sc.archetype_mix.size())
      throw ConfigError("synth.archetype_mix needs " + std::to_string(sc.archetype_mix.size()) + " entries");
    std::copy(mix.begin(), mix.end(), sc.archetype_mix.begin());
  }
  sc.seed = seed;
  sc.validate();
  return sc;
}

inline void cmd_generate(const Invocation& inv) {
  inv.config.check_keys({"seed", "synth.n_households", "synth.n_weeks", "synth.profile_jitter", "synth.week_noise",
                         "synth.ar1_rho", "synth.vacation_prob", "synth.seasonal_amplitude", "synth.timing_jitter",
                         "synth.spike_rate", "synth.spike_height", "synth.utilities", "synth.start",
                         "synth.archetype_mix"});
  const auto sc = synth_config(inv.config, inv.seed);
  const OutputDir out(inv.out, inv.overwrite);
  const auto readings = out.claim("readings.csv");
  out.claim("households.csv");
  const auto gen = synth::generate(sc);
  io::write_readings(readings, std::span<const Dataset>(&gen.data, 1));
  std::ostringstream truth;
  truth << "user_id,archetype\n";
  for (const auto& p : synth::sample_population(sc)) truth << p.user_id << ',' << synth::archetype_name(p.archetype) << '\n';
  out.write("households.csv", truth.str());
  *inv.log << "generated " << sc.n_households << " households x " << sc.n_weeks << " weeks -> " << readings.string()
           << '\n';
}

// ---------------------------------------------------------------------------
// preprocess

inline void cmd_preprocess(const Invocation& inv) {
  const auto& cfg = inv.config;
  cfg.check_keys({"seed", "input", "preprocess.gas_clip_quantile", "preprocess.train_weeks"});
  const fs::path input = existing_path(cfg, "input");
  PreprocessConfig pc;
  const std::string clip = cfg.get("preprocess.gas_clip_quantile", "0.999");
  if (clip == "none") {
    pc.gas_clip_quantile.reset();
  } else {
    pc.gas_clip_quantile = cfg.get_double("preprocess.gas_clip_quantile", 0.999);
  }
  pc.validate();
  const std::size_t train_weeks = cfg.get_size("preprocess.train_weeks", 0);
  const OutputDir out(inv.out, inv.overwrite);
  const auto target = out.claim("dataset.csv");

  const io::RawDataset raw = io::ingest_readings(input);
  SlotGrid grid = infer_grid(raw);
  grid.slots = (grid.slots + kHoursPerWeek - 1) / kHoursPerWeek * kHoursPerWeek;
  PreprocessConfig unclipped = pc;
  unclipped.gas_clip_quantile.reset();
  Dataset ds = preprocess(raw, unclipped, grid);
  if (pc.gas_clip_quantile && grid.utilities >= 2) {
    if (train_weeks > weeks_of(ds)) throw ConfigError("preprocess.train_weeks exceeds the data");
    const Dataset train = train_weeks == 0 ? ds : slice_weeks(ds, 0, train_weeks);
    ds = clip_gas(ds, gas_clip_threshold(std::span<const Dataset>(&train, 1), *pc.gas_clip_quantile));
  }
  io::write_readings(target, std::span<const Dataset>(&ds, 1));
  *inv.log << "preprocessed " << raw.parsed_rows << " rows (" << raw.rejected_rows << " rejected), " << ds.size()
           << " pseudonyms x " << weeks_of(ds) << " weeks -> " << target.string() << '\n';
}

// ---------------------------------------------------------------------------
// train

inline void put_vector(nk::Checkpoint& ck, const std::string& name, const std::vector<double>& v) {
  ck.arrays.push_back({name, {v.size()}, v});
}

struct LoadedModel {
  embed::Embedder model;
  ScalingStats stats;
  std::vector<std::string> aux_users;
  std::size_t M = 0;
  std::string checkpoint_id;
};

inline LoadedModel load_model(const fs::path& path) {
  const std::string text = io::read_file(path);
  const nk::Checkpoint ck = nk::deserialize(text);
  LoadedModel m;
  m.model = embed::Embedder::from_checkpoint(ck);
  m.stats.unit_min = ck.array("scaling.unit_min").data;
  m.stats.unit_max = ck.array("scaling.unit_max").data;
  m.stats.mean = ck.array("scaling.mean").data;
  m.stats.stddev = ck.array("scaling.stddev").data;
  m.aux_users = io::split(ck.value("aux_users"), ',');
  std::int64_t M = 0;
  if (!io::parse_int(ck.value("M"), M) || M < 1) throw DataError("checkpoint has a malformed M");
  m.M = static_cast<std::size_t>(M);
  m.checkpoint_id = content_id(text);
  return m;
}

inline void cmd_train(const Invocation& inv) {
  const auto& cfg = inv.config;
  cfg.check_keys({"seed", "data", "model.kind", "model.layers", "split.aux_users", "train.M", "train.mode",
                  "train.batch_size", "train.margin", "train.lag", "train.learning_rate", "train.weight_decay",
                  "train.lr_floor", "train.patience", "train.max_epochs", "grid.learning_rates",
                  "grid.weight_decays", "grid.layers", "grid.lags"});
  const fs::path data_path = existing_path(cfg, "data");
  const auto kind = embed::parse_kind(cfg.get("model.kind", "cnn_lstm"));
  const std::string mode = cfg.get("train.mode", "grid");
  if (mode != "grid" && mode != "single") throw ConfigError("train.mode must be grid or single");
  const std::size_t M = cfg.get_size("train.M", 8);

  train::TrainConfig base;
  base.batch_size = cfg.get_size("train.batch_size", base.batch_size);
  base.margin = cfg.get_double("train.margin", base.margin);
  base.lag = cfg.get_size("train.lag", base.lag);
  base.optimizer.learning_rate = cfg.get_double("train.learning_rate", base.optimizer.learning_rate);
  base.optimizer.weight_decay = cfg.get_double("train.weight_decay", base.optimizer.weight_decay);
  base.optimizer.lr_floor = cfg.get_double("train.lr_floor", base.optimizer.lr_floor);
  base.optimizer.patience = static_cast<int>(cfg.get_int("train.patience", base.optimizer.patience));
  base.optimizer.max_epochs = static_cast<int>(cfg.get_int("train.max_epochs", base.optimizer.max_epochs));
  base.seed = inv.seed;

  train::GridSpec grid;
  grid.learning_rates = cfg.get_doubles("grid.learning_rates", grid.learning_rates);
  grid.weight_decays = cfg.get_doubles("grid.weight_decays", grid.weight_decays);
  grid.layers = cfg.get_sizes("grid.layers", grid.layers);
  grid.lags = cfg.get_sizes("grid.lags", grid.lags);
  grid.validate();

  const Dataset raw = load_dataset(data_path);
  if (M > weeks_of(raw)) throw ConfigError("train.M exceeds the " + std::to_string(weeks_of(raw)) + " weeks of data");
  auto model_cfg = embed::EmbedderConfig::defaults(kind, raw.grid().utilities);
  if (cfg.has("model.layers")) model_cfg.layers = cfg.get_size("model.layers", 1);
  model_cfg.validate();

  const OutputDir out(inv.out, inv.overwrite);
  const auto ck_path = out.claim("checkpoint.mlk");
  out.claim("history.csv");
  if (mode == "grid") out.claim("grid.csv");

  const auto aux_users = choose_aux_users(raw.pseudonyms(), cfg.get_size("split.aux_users", 0), inv.seed);
  const Dataset aux = attack::select_users(slice_weeks(raw, 0, M), aux_users);
  const auto weekly = split_weeks(aux);
  const ScalingStats stats = fit_scaling(std::span<const Dataset>(weekly));
  const Dataset scaled = apply_unit_scaling(aux, stats);

  train::TrainResult result;
  std::string grid_csv;
  if (mode == "grid") {
    auto g = train::grid_search(model_cfg, grid, scaled, M, base, inv.workers);
    std::ostringstream gs;
    gs << "learning_rate,weight_decay,layers,lag,score,diverged\n";
    for (const auto& e : g.entries)
      gs << io::format_double(e.point.learning_rate) << ',' << io::format_double(e.point.weight_decay) << ','
         << e.point.layers << ',' << e.point.lag << ',' << io::format_double(e.score) << ',' << e.diverged << '\n';
    grid_csv = gs.str();
    model_cfg = g.model_config;
    result = std::move(g.final_run);
  } else {
    if (M < 3) throw ConfigError("single training needs train.M >= 3");
    train::TrainConfig tc = base;
    tc.train_weeks = {0, M - 2};
    tc.validation_reference = M - 2;
    tc.validation_target = M - 1;
    result = train::train(model_cfg, scaled, tc);
  }
  if (result.best_epoch == 0) throw NumericalError("training produced no validated epoch");

  nk::Checkpoint ck = result.model.to_checkpoint();
  put_vector(ck, "scaling.unit_min", stats.unit_min);
  put_vector(ck, "scaling.unit_max", stats.unit_max);
  put_vector(ck, "scaling.mean", stats.mean);
  put_vector(ck, "scaling.stddev", stats.stddev);
  ck.header["aux_users"] = join(aux_users);
  ck.header["M"] = std::to_string(M);
  ck.header["seed"] = std::to_string(inv.seed);
  ck.header["config_hash"] = config_hash(cfg);
  ck.header["data_id"] = content_id(io::read_file(data_path));
  const std::string text = nk::serialize(ck);
  out.write("checkpoint.mlk", text);
  out.write("history.csv", train::history_csv(result.history));
  if (mode == "grid") out.write("grid.csv", grid_csv);
  *inv.log << "trained " << embed::to_string(model_cfg.kind) << " (L=" << model_cfg.layers << ") best epoch "
           << result.best_epoch << " val rank-1 " << io::format_double(result.best_val_rank1) << " -> "
           << ck_path.string() << " [" << content_id(text) << "]\n";
}

// ---------------------------------------------------------------------------
// attack

struct Variant {
  std::size_t gap = 1;
  std::size_t period_weeks = 1;
  std::optional<RoundingSpec> rounding;

  std::string label() const {
    return "gap=" + std::to_string(gap) + "|period_weeks=" + std::to_string(period_weeks) +
           "|rounding=" + rounding_label(rounding);
  }
};

inline std::vector<Variant> variants(const RunConfig& cfg) {
  std::vector<Variant> out;
  for (std::size_t g : cfg.get_sizes("attack.gaps", {1}))
    for (std::size_t p : cfg.get_sizes("attack.period_weeks", {1}))
      for (const auto& r : parse_rounding(cfg)) out.push_back({g, p, r});
  return out;
}

inline const std::set<std::string>& experiment_keys() {
  static const std::set<std::string> keys{"seed",          "data",           "attack.scenario",
                                          "attack.M",      "attack.gaps",    "attack.period_weeks",
                                          "attack.rounding", "attack.runs",  "attack.ranks",
                                          "split.aux_users"};
  return keys;
}

inline void cmd_attack(const Invocation& inv) {
  const auto& cfg = inv.config;
  auto allowed = experiment_keys();
  allowed.erase("split.aux_users");  // the checkpoint records its training users
  for (const char* k : {"checkpoints", "attack.method", "attack.population_sizes", "attack.roc"}) allowed.insert(k);
  cfg.check_keys(allowed);
  const fs::path data_path = existing_path(cfg, "data");
  std::vector<LoadedModel> models;
  for (const auto& p : cfg.get_list("checkpoints", {})) {
    if (!fs::exists(p)) throw ConfigError("checkpoint '" + p + "' does not exist");
    models.push_back(load_model(p));
  }
  if (models.empty()) throw ConfigError("config key 'checkpoints' is required");
  for (const auto& m : models)
    if (m.aux_users != models.front().aux_users || m.M != models.front().M)
      throw ConfigError("checkpoints were trained on different users or weeks");
  const std::size_t runs = cfg.get_size("attack.runs", models.size());
  if (runs == 0 || (models.size() != 1 && models.size() != runs))
    throw ConfigError("attack.runs must equal the number of checkpoints (or use one checkpoint)");
  const auto scenario = parse_scenario(cfg.get("attack.scenario", "I"));
  const std::string method = cfg.get("attack.method", embed::to_string(models.front().model.config().kind));
  const auto ranks = cfg.get_sizes("attack.ranks", {1, 5, 10});
  const auto sizes = cfg.get_sizes("attack.population_sizes", {});
  const bool roc = cfg.get_bool("attack.roc", false);
  const auto vars = variants(cfg);

  const Dataset raw = load_dataset(data_path);
  const auto& aux_users = models.front().aux_users;
  const auto reference_users = scenario == attack::Scenario::I ? aux_users : complement(raw.pseudonyms(), aux_users);
  if (reference_users.empty()) throw DataError("scenario II needs users outside the training set");

  const OutputDir out(inv.out, inv.overwrite);
  out.claim("results.csv");
  if (roc) out.claim("roc.csv");

  std::vector<attack::WeekEncoder> encoders;
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto& m = models[models.size() == 1 ? 0 : r];
    encoders.push_back(attack::embedder_encoder(m.model.clone(), m.stats));
    ids.push_back(m.checkpoint_id);
  }

  ResultTable table(config_hash(cfg), inv.seed);
  std::string roc_text;
  for (const auto& v : vars) {
    attack::ExperimentConfig ec;
    ec.scenario = scenario;
    ec.M = cfg.get_size("attack.M", models.front().M);
    ec.gap = v.gap;
    ec.period_weeks = v.period_weeks;
    ec.rounding = v.rounding;
    ec.runs = runs;
    ec.seed = inv.seed;
    ec.validate();
    const auto res = attack::run_scenario(ec, encoders, {raw, aux_users, reference_users});
    std::vector<attack::RocCurve> curves;
    for (std::size_t r = 0; r < runs; ++r) {
      const ResultRow base{"attack", v.label(), method, attack::to_string(scenario), reference_users.size(), r, "", 0.0,
                           ids[r]};
      table.add_curve(base, res.curves[r], ranks);
      if (roc) {
        const auto scores = attack::gap_scores(res.results[r]);
        const auto correct = std::count_if(scores.begin(), scores.end(), [](const auto& s) { return s.correct; });
        if (correct == 0 || correct == static_cast<std::ptrdiff_t>(scores.size())) {
          *inv.log << "attack " << v.label() << " run " << r << ": no ROC, every match is "
                   << (correct == 0 ? "wrong" : "correct") << '\n';
          continue;
        }
        curves.push_back(attack::roc_curve(scores));
        ResultRow a = base;
        a.experiment = "gap_auc";
        a.metric = "auc";
        a.value = curves.back().auc;
        table.add(a);
      }
    }
    if (!curves.empty()) {
      std::istringstream rs(attack::roc_csv(curves));
      std::string line;
      std::getline(rs, line);
      if (roc_text.empty()) roc_text = "variant," + line + "\n";
      while (std::getline(rs, line)) roc_text += v.label() + "," + line + "\n";
    }
    *inv.log << "attack " << v.label() << ": rank-1 mean " << io::format_double(res.mean[0]) << '\n';
  }

  if (!sizes.empty()) {
    // Pools of the first variant, one per run.
    const Variant& v = vars.front();
    attack::ExperimentConfig ec;
    ec.M = cfg.get_size("attack.M", models.front().M);
    ec.gap = v.gap;
    ec.period_weeks = v.period_weeks;
    for (std::size_t r = 0; r < runs; ++r) {
      const auto pair = attack::make_period_pair(raw, reference_users, ec.reference_week(), ec.target_week(),
                                                 v.period_weeks, v.rounding, inv.seed + r);
      const auto index = attack::make_index(pair.reference.pseudonyms(), attack::encode_period(encoders[r], pair.reference));
      const auto tgt_names = pair.target.pseudonyms();
      const auto tgt_emb = attack::encode_period(encoders[r], pair.target);
      std::map<std::string, std::size_t> row_of;
      for (std::size_t i = 0; i < tgt_names.size(); ++i) row_of[tgt_names[i]] = i;
      std::vector<std::vector<double>> aligned;
      for (const auto& e : index.entries)
        aligned.push_back(tgt_emb[row_of.at(pair.scheme.pseudonym_of(1, pair.scheme.user_of(0, e.pseudonym)))]);
      for (const auto& row : attack::population_scaling(sizes, index, aligned, inv.seed + r))
        table.add({"population", v.label() + "|size=" + std::to_string(row.population), method,
                   attack::to_string(scenario), row.population, r, "p@1", row.rank1, ids[r]});
    }
  }

  out.write("results.csv", table.csv());
  if (roc) out.write("roc.csv", roc_text.empty() ? "variant,fpr,tpr_mean,tpr_std\n" : roc_text);
}

// ---------------------------------------------------------------------------
// baseline

inline void cmd_baseline(const Invocation& inv) {
  const auto& cfg = inv.config;
  auto allowed = experiment_keys();
  for (const char* k : {"baseline.method", "jawurek.bins", "jawurek.lambda", "jawurek.epochs", "forest.trees",
                        "forest.min_split_fraction", "forest.bootstrap"})
    allowed.insert(k);
  cfg.check_keys(allowed);
  const fs::path data_path = existing_path(cfg, "data");
  const std::string method = cfg.require("baseline.method");
  static const std::set<std::string> methods{"random", "l2_raw", "buchmann", "tudor", "jawurek", "faisal"};
  if (!methods.count(method)) throw ConfigError("unknown baseline.method '" + method + "'");
  const auto scenario = parse_scenario(cfg.get("attack.scenario", "I"));
  const bool supervised = method == "jawurek" || method == "faisal";
  if (supervised && scenario != attack::Scenario::I)
    throw ConfigError(method + " trains one classifier per reference user and only supports scenario I");
  const std::size_t M = cfg.get_size("attack.M", 8);
  const std::size_t runs = cfg.get_size("attack.runs", 1);
  if (runs == 0) throw ConfigError("attack.runs must be positive");
  const auto ranks = cfg.get_sizes("attack.ranks", {1, 5, 10});
  const auto vars = variants(cfg);
  for (const auto& v : vars)
    if (v.period_weeks != 1) throw ConfigError("baselines match single weeks; attack.period_weeks must be 1");

  baselines::JawurekConfig jc;
  jc.bins = cfg.get_size("jawurek.bins", jc.bins);
  jc.lambda = cfg.get_double("jawurek.lambda", jc.lambda);
  jc.epochs = cfg.get_size("jawurek.epochs", jc.epochs);
  jc.seed = inv.seed;
  baselines::ForestConfig fc;
  fc.trees = cfg.get_size("forest.trees", fc.trees);
  fc.min_split_fraction = cfg.get_double("forest.min_split_fraction", fc.min_split_fraction);
  fc.bootstrap = cfg.get_bool("forest.bootstrap", fc.bootstrap);
  fc.seed = inv.seed;

  const Dataset raw = load_dataset(data_path);
  if (M > weeks_of(raw)) throw ConfigError("attack.M exceeds the data");
  const auto aux_users = choose_aux_users(raw.pseudonyms(), cfg.get_size("split.aux_users", 0), inv.seed);
  const auto reference_users = scenario == attack::Scenario::I ? aux_users : complement(raw.pseudonyms(), aux_users);
  if (reference_users.empty()) throw DataError("scenario II needs users outside the training set");
  const Dataset aux = attack::select_users(slice_weeks(raw, 0, M), aux_users);

  const OutputDir out(inv.out, inv.overwrite);
  out.claim("results.csv");
  ResultTable table(config_hash(cfg), inv.seed);

  // Fitted once; they depend on the auxiliary weeks only.
  std::optional<ScalingStats> stats;
  std::optional<baselines::DifferenceCalibration> cal;
  std::optional<baselines::JawurekModel> jawurek;
  std::optional<baselines::ForestModel> forest;
  if (method == "l2_raw") {
    const auto weekly = split_weeks(aux);
    stats = fit_scaling(std::span<const Dataset>(weekly));
  } else if (method == "buchmann") {
    cal = baselines::buchmann_calibrate(aux, M);
  } else if (method == "jawurek") {
    jawurek = baselines::jawurek_train(aux, M, jc);
  } else if (method == "faisal") {
    forest = baselines::faisal_train(aux, M, fc);
  }

  for (const auto& v : vars) {
    attack::ExperimentConfig ec;
    ec.M = M;
    ec.gap = v.gap;
    for (std::size_t r = 0; r < runs; ++r) {
      const ResultRow base{"baseline", v.label(), method, attack::to_string(scenario), reference_users.size(), r, "",
                           0.0, "-"};
      if (method == "random") {
        table.add_curve(base, baselines::random_guess_curve(reference_users.size()), ranks);
        continue;
      }
      const auto pair = attack::make_period_pair(raw, reference_users, ec.reference_week(), ec.target_week(), 1,
                                                 v.rounding, inv.seed + r);
      const Dataset& ref = pair.reference.weeks.front();
      const Dataset& tgt = pair.target.weeks.front();
      const baselines::TruthFn truth = [&](const std::string& t) { return pair.truth(t); };
      const baselines::TruthFn user = [&](const std::string& t) { return pair.scheme.user_of(1, t); };
      std::vector<attack::MatchResult> results;
      if (method == "l2_raw") results = baselines::l2_raw_match(ref, tgt, *stats, truth);
      if (method == "tudor") results = baselines::tudor_match(ref, tgt, truth);
      if (method == "buchmann") results = baselines::buchmann_match(ref, tgt, *cal, truth);
      if (method == "jawurek") results = baselines::jawurek_match(*jawurek, tgt, user);
      if (method == "faisal") results = baselines::faisal_match(*forest, tgt, user);
      table.add_curve(base, attack::RankCurve::from_results(results), ranks);
    }
  }
  out.write("results.csv", table.csv());
}

// ---------------------------------------------------------------------------
// report

struct SummaryRow {
  std::string experiment, variant, method, scenario, population, metric;
  std::vector<double> values;
};

// Mean and sample standard deviation per (experiment, variant, method,
// scenario, population, metric) over every results.csv under `input`.
inline std::vector<SummaryRow> summarize(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(input)) {
    files.push_back(input);
  } else {
    for (const auto& e : fs::recursive_directory_iterator(input))
      if (e.is_regular_file() && e.path().filename() == "results.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no results.csv under '" + input.string() + "'");
  std::vector<SummaryRow> rows;
  std::map<std::string, std::size_t> index;
  for (const auto& f : files) {
    std::istringstream in(io::read_file(f));
    std::string line;
    std::getline(in, line);
    if (line.rfind("experiment,variant,method,scenario,population,run,metric,value", 0) != 0)
      throw DataError("unexpected results header in '" + f.string() + "'");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto c = io::split(line);
      double v = 0.0;
      if (c.size() != 11 || !io::parse_double(c[7], v)) throw DataError("malformed results row in '" + f.string() + "'");
      const std::string key = c[0] + '\x1f' + c[1] + '\x1f' + c[2] + '\x1f' + c[3] + '\x1f' + c[4] + '\x1f' + c[6];
      auto [it, fresh] = index.emplace(key, rows.size());
      if (fresh) rows.push_back({c[0], c[1], c[2], c[3], c[4], c[6], {}});
      rows[it->second].values.push_back(v);
    }
  }
  return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "experiment,variant,method,scenario,population,metric,runs,mean,std\n";
  for (const auto& r : rows) {
    const double n = static_cast<double>(r.values.size());
    double mean = 0.0, ss = 0.0;
    for (double v : r.values) mean += v;
    mean /= n;
    for (double v : r.values) ss += (v - mean) * (v - mean);
    const double sd = r.values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    out << r.experiment << ',' << r.variant << ',' << r.method << ',' << r.scenario << ',' << r.population << ','
        << r.metric << ',' << r.values.size() << ',' << io::format_double(mean) << ',' << io::format_double(sd) << '\n';
  }
  return out.str();
}

inline void cmd_report(const Invocation& inv) {
  inv.config.check_keys({"seed", "input"});
  const fs::path input = existing_path(inv.config, "input");
  const OutputDir out(inv.out, inv.overwrite);
  out.claim("summary.csv");
  out.write("summary.csv", summary_csv(summarize(input)));
}

// ---------------------------------------------------------------------------

inline void run(const Invocation& inv) {
  if (inv.workers < 1) throw ConfigError("--workers must be at least 1");
  if (inv.command == "generate") return cmd_generate(inv);
  if (inv.command == "preprocess") return cmd_preprocess(inv);
  if (inv.command == "train") return cmd_train(inv);
  if (inv.command == "attack") return cmd_attack(inv);
  if (inv.command == "baseline") return cmd_baseline(inv);
  if (inv.command == "report") return cmd_report(inv);
  throw ConfigError("unknown subcommand '" + inv.command + "'");
}

}  // namespace meterlink::cli

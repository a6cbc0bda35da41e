/*
 * Copyright 2026 The oodsynth Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// oodsynth command line. Every subcommand except export takes --config plus
// one flag per config key (dotted path, e.g. --sampler.k 50); flags win over
// the file and --seed overrides the global seed.
//
// Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oodsynth/error.hpp"
#include "oodsynth/pipeline.hpp"

namespace {

using nlohmann::json;
using namespace oodsynth;

enum class Kind { kUint, kInt, kDouble, kString, kBool, kUintList };

struct Key {
  const char* path;
  Kind kind;
  const char* help;
};

// Mirrors the keys accepted by parse_config.
constexpr Key kKeys[] = {
    {"seed", Kind::kUint, "global seed"},
    {"output_dir", Kind::kString, "artifact directory"},
    {"data.synthetic.classes", Kind::kUint, "ID classes"},
    {"data.synthetic.d_in", Kind::kUint, "raw feature dimension"},
    {"data.synthetic.ood_components", Kind::kUint, "held-out OOD components"},
    {"data.synthetic.train_per_class", Kind::kUint, "ID train rows per class"},
    {"data.synthetic.test_per_class", Kind::kUint, "ID test rows per class"},
    {"data.synthetic.ood_test_per_component", Kind::kUint, "OOD test rows per component"},
    {"data.synthetic.mean_radius", Kind::kDouble, "norm of generated ID means"},
    {"data.synthetic.ood_mean_radius", Kind::kDouble, "norm of generated OOD means"},
    {"data.synthetic.id_stddev", Kind::kDouble, "ID component stddev"},
    {"data.synthetic.ood_stddev", Kind::kDouble, "OOD component stddev"},
    {"data.synthetic.seed", Kind::kUint, "data seed"},
    {"data.id_train", Kind::kString, "ID train DOEB (with labels)"},
    {"data.id_test", Kind::kString, "ID test DOEB (with labels)"},
    {"data.ood_test", Kind::kString, "OOD test DOEB"},
    {"prototypes.file", Kind::kString, "token embeddings DOEB"},
    {"prototypes.dim", Kind::kUint, "embedding dimension m"},
    {"prototypes.norm", Kind::kDouble, "norm of generated token embeddings"},
    {"prototypes.seed", Kind::kUint, "prototype seed"},
    {"phase1.epochs", Kind::kInt, ""},
    {"phase1.batch_size", Kind::kUint, ""},
    {"phase1.lr0", Kind::kDouble, ""},
    {"phase1.momentum", Kind::kDouble, ""},
    {"phase1.weight_decay", Kind::kDouble, ""},
    {"phase1.temperature", Kind::kDouble, ""},
    {"phase1.seed", Kind::kUint, ""},
    {"phase1.hidden_widths", Kind::kUintList, "comma separated"},
    {"sampler.k", Kind::kUint, ""},
    {"sampler.sigma2", Kind::kDouble, ""},
    {"sampler.candidates_per_anchor", Kind::kUint, ""},
    {"sampler.anchors_per_class", Kind::kUint, ""},
    {"sampler.samples_per_class", Kind::kUint, ""},
    {"sampler.mode", Kind::kString, "ood or id"},
    {"sampler.reference", Kind::kString, "class or global"},
    {"sampler.seed", Kind::kUint, ""},
    {"detector.epochs", Kind::kInt, ""},
    {"detector.batch_size", Kind::kUint, ""},
    {"detector.lr0", Kind::kDouble, ""},
    {"detector.momentum", Kind::kDouble, ""},
    {"detector.weight_decay", Kind::kDouble, ""},
    {"detector.seed", Kind::kUint, ""},
    {"detector.beta", Kind::kDouble, ""},
    {"detector.hidden_widths", Kind::kUintList, "comma separated"},
    {"detector.phi_width", Kind::kUint, ""},
    {"metrics.record_wall_ms", Kind::kBool, "true or false"},
};

template <typename T>
T parse_number(const std::string& flag, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("--" + flag + ": cannot parse \"" + text + "\"");
  }
  return v;
}

json to_json(const Key& key, const std::string& text) {
  switch (key.kind) {
    case Kind::kUint: return parse_number<std::uint64_t>(key.path, text);
    case Kind::kInt: return parse_number<std::int64_t>(key.path, text);
    case Kind::kDouble: return parse_number<double>(key.path, text);
    case Kind::kString: return text;
    case Kind::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError(std::string("--") + key.path + ": expected true or false");
    case Kind::kUintList: {
      json list = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) list.push_back(parse_number<std::uint64_t>(key.path, item));
      return list;
    }
  }
  return nullptr;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>("values", item));
  return out;
}

// Flags shared by every pipeline subcommand.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    for (const auto& key : kKeys) {
      cmd->add_option(std::string("--") + key.path, values[key.path], key.help);
    }
  }

  PipelineConfig load(CLI::App* cmd) const {
    json root = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      try {
        root = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError(config_path + " is not valid JSON: " + e.what());
      }
    }
    for (const auto& key : kKeys) {
      if (cmd->count(std::string("--") + key.path) == 0) continue;
      json* node = &root;
      std::string path = key.path;
      for (std::size_t dot; (dot = path.find('.')) != std::string::npos; path.erase(0, dot + 1)) {
        node = &(*node)[path.substr(0, dot)];
      }
      (*node)[path] = to_json(key, values.at(key.path));
    }
    return parse_config(root.dump());
  }
};

void print_metrics(const Evaluation& ev) {
  std::printf("%-12s %8s %8s %8s\n", "method", "fpr95", "auroc", "id_acc");
  for (const auto& r : ev.rows) {
    std::printf("%-12s %8.4f %8.4f %8.4f\n", r.method.c_str(), r.fpr95, r.auroc, r.id_acc);
  }
  std::printf("threshold at 95%% ID TPR: %.6g\n", ev.threshold);
}

int run(int argc, char** argv) {
  CLI::App app{"Outlier synthesis in a prototype-conditioned embedding space"};
  app.require_subcommand(1);

  struct Pipe {
    const char* name;
    const char* help;
    CLI::App* cmd = nullptr;
    ConfigFlags flags;
  };
  std::vector<Pipe> pipes = {
      {"gen-data", "generate synthetic data and prototypes"},
      {"fit-space", "train the encoder head (phase 1)"},
      {"sample-ood", "synthesize boundary outlier embeddings"},
      {"sample-id", "synthesize inlier embeddings"},
      {"train-detector", "train the regularized classifier"},
      {"evaluate", "write metrics.csv for the trained detector"},
      {"run", "all stages in order"},
      {"sweep", "ablation sweep over beta, sigma2 or k"},
  };
  for (auto& p : pipes) {
    p.cmd = app.add_subcommand(p.name, p.help);
    p.flags.attach(p.cmd);
  }
  CLI::App* sweep_cmd = pipes.back().cmd;
  std::string axis;
  std::string values_text;
  std::size_t replicates = 1;
  sweep_cmd->add_option("--axis", axis, "beta, sigma2 or k")->required();
  sweep_cmd->add_option("--values", values_text, "comma separated; default is the preset grid");
  sweep_cmd->add_option("--replicates", replicates, "seeds per value");

  CLI::App* export_cmd = app.add_subcommand("export", "convert a DOEB file to csv, json or doeb");
  std::string input;
  std::string output;
  std::string format = "csv";
  export_cmd->add_option("--input", input, "DOEB file")->required();
  export_cmd->add_option("--output", output, "destination")->required();
  export_cmd->add_option("--format", format, "csv, json or doeb");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_code::kOk : exit_code::kConfig;
  }

  if (export_cmd->parsed()) {
    export_doeb(input, output, format);
    return exit_code::kOk;
  }
  for (auto& p : pipes) {
    if (!p.cmd->parsed()) continue;
    const PipelineConfig config = p.flags.load(p.cmd);
    const std::string name = p.name;
    if (name == "gen-data") {
      stage_gen_data(config);
    } else if (name == "fit-space") {
      stage_fit_space(config);
    } else if (name == "sample-ood") {
      stage_sample(config, SampleMode::kOod);
    } else if (name == "sample-id") {
      stage_sample(config, SampleMode::kId);
    } else if (name == "train-detector") {
      stage_train_detector(config);
    } else if (name == "evaluate") {
      print_metrics(stage_evaluate(config));
    } else if (name == "run") {
      print_metrics(run_all(config));
    } else {
      const SweepAxis a = parse_axis(axis);
      const auto values = values_text.empty() ? preset_values(a) : parse_values(values_text);
      const auto rows = sweep(config, a, values, replicates);
      std::printf("wrote %zu rows to %s\n", rows.size(),
                  (config.output_dir / ("sweep_" + axis + ".csv")).string().c_str());
    }
  }
  return exit_code::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {  // includes ConfigError
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_code::kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return exit_code::kNumerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return exit_code::kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

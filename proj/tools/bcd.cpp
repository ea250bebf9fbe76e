// bcd: generate data, train, evaluate, run ablations and dump diagnostics.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "bcd/experiment.hpp"

namespace fs = std::filesystem;
using namespace bcd;

namespace {

std::string kebab(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json parse_scalar(const std::string& flag, const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    throw ConfigError("--" + flag + ": cannot parse '" + text + "'");
  }
}

/// --config file plus one --kebab-case flag per configuration key.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON configuration file (flat keys)");
    const json defaults = ExperimentConfig{}.to_json();
    for (const auto& [key, value] : defaults.items()) {
      std::string help = "config key " + key + " (default " + value.dump() + ")";
      app->add_option("--" + kebab(key), values[key], help);
    }
  }

  ExperimentConfig resolve() const {
    json j = json::object();
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw ConfigError("cannot read config file " + file);
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError(file + " is not valid JSON: " + e.what());
      }
      if (!j.is_object()) throw ConfigError(file + " must hold a JSON object");
    }
    const json defaults = ExperimentConfig{}.to_json();
    for (const auto& [key, text] : values) {
      if (text.empty()) continue;
      const json& ref = defaults[key];
      const std::string flag = kebab(key);
      if (ref.is_string()) {
        j[key] = text;
      } else if (ref.is_array()) {
        json arr = json::array();
        for (const auto& item : split_list(text)) arr.push_back(parse_scalar(flag, item));
        j[key] = arr;
      } else {
        j[key] = parse_scalar(flag, text);
      }
    }
    return ExperimentConfig::from_json(j);
  }
};

json run_header(const ExperimentConfig& c) { return json{{"config", c.to_json()}, {"config_hash", config_hash(c)}}; }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

/// --data, else $BCD_DATA_DIR, else empty.
std::string data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BCD_DATA_DIR")) return env;
  return {};
}

/// A saved dataset when the root holds one, otherwise the configured synthetic benchmark.
Dataset obtain_dataset(const ExperimentConfig& c, const std::string& root) {
  if (!root.empty() && fs::exists(fs::path(root) / "manifest.csv")) return load_dataset(root);
  return generate_benchmark(c.synth());
}

std::unique_ptr<BcdNet> model_for(const ExperimentConfig& c, const std::string& checkpoint, const Dataset& ds) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint);
  return std::make_unique<BcdNet>(c, ClassMap::build(ds).size());
}

/// Deterministic, unaugmented P×A batches from the train split.
std::vector<std::vector<std::size_t>> diagnostic_batches(const Dataset& ds, const ExperimentConfig& c,
                                                         std::size_t count) {
  const auto train = ds.indices(Split::kTrain);
  std::vector<int> labels;
  for (auto i : train) labels.push_back(ds.samples[i].identity);
  const auto index = IdentityIndex::build(labels);
  Rng rng(detail::mix_seed(c.seed, 0xd1a9));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < count; ++b) {
    auto pk = sample_pk(index, c.p, c.a, rng);
    for (auto& s : pk.samples) s = train[s];
    out.push_back(pk.samples);
  }
  return out;
}

EmbeddingTable read_embeddings(const std::string& tns, const std::string& labels) {
  const Tensor t = read_tns(tns);
  if (t.rank() != 2) throw std::runtime_error(tns + ": expected an N×d tensor");
  EmbeddingTable table;
  table.dim = t.dim(1);
  table.data = t.vec();
  std::ifstream in(labels);
  if (!in) throw std::runtime_error("cannot read " + labels);
  std::string line;
  std::getline(in, line);
  if (line != "identity,camera") throw std::runtime_error(labels + ": expected header 'identity,camera'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split_list(line);
    if (cols.size() != 2) throw std::runtime_error(labels + ": malformed row '" + line + "'");
    table.identities.push_back(std::stoi(cols[0]));
    table.cameras.push_back(std::stoi(cols[1]));
  }
  if (table.identities.size() != t.dim(0))
    throw std::runtime_error(labels + " has " + std::to_string(table.identities.size()) + " rows, " + tns + " has " +
                             std::to_string(t.dim(0)));
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batch-coherent part attention for person re-identification at toy scale"};
  app.require_subcommand(1);

  struct Common {
    ConfigFlags config;
    std::string data;
    std::string out;
    std::string checkpoint;
  };
  std::map<std::string, Common> common;
  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    common[name].config.attach(sub);
    return sub;
  };

  auto* cfg = add("config", "print the resolved configuration and its hash");

  auto* gen = add("generate", "write the synthetic dataset to disk");
  gen->add_option("--out", common["generate"].out, "dataset directory (default $BCD_DATA_DIR or ./data)");

  auto* tr = add("train", "train one configuration; writes a checkpoint and a JSON-lines log");
  tr->add_option("--data", common["train"].data, "dataset directory (default $BCD_DATA_DIR, else generated)");
  tr->add_option("--out", common["train"].out, "run directory")->required();

  std::string query_tns, query_labels, gallery_tns, gallery_labels;
  std::size_t max_rank = 50;
  auto* ev = add("evaluate", "retrieval metrics of a checkpoint, or of stored query/gallery embeddings");
  ev->add_option("--checkpoint", common["evaluate"].checkpoint, "checkpoint directory");
  ev->add_option("--data", common["evaluate"].data, "dataset directory (default $BCD_DATA_DIR, else generated)");
  ev->add_option("--query", query_tns, "query embeddings (.tns, N×d)");
  ev->add_option("--query-labels", query_labels, "query labels CSV (identity,camera)");
  ev->add_option("--gallery", gallery_tns, "gallery embeddings (.tns, N×d)");
  ev->add_option("--gallery-labels", gallery_labels, "gallery labels CSV (identity,camera)");
  ev->add_option("--max-rank", max_rank, "CMC depth");
  ev->add_option("--out", common["evaluate"].out, "metrics JSON path (default: stdout)");

  std::string rows = "baseline,baseline+,bcca,full";
  auto* ab = add("ablate", "train and evaluate several component rows under one shared seed");
  ab->add_option("--rows", rows, "comma-separated rows: " + [] {
    std::string s;
    for (const auto& n : ablation_row_names()) s += (s.empty() ? "" : ",") + n;
    return s;
  }());
  ab->add_option("--data", common["ablate"].data, "dataset directory (default $BCD_DATA_DIR, else generated)");
  ab->add_option("--out", common["ablate"].out, "CSV path")->required();

  std::size_t dump_batches = 1;
  for (const std::string name : {"dump-supervision", "dump-attention", "dump-profiles"}) {
    auto* d = add(name, name == "dump-supervision" ? "write the estimated supervision matrix per batch"
                        : name == "dump-attention" ? "write per-image and batch-mean attention weights per batch"
                                                   : "write part, target and holistic height profiles per batch");
    d->add_option("--checkpoint", common[name].checkpoint, "checkpoint directory (default: untrained model)");
    d->add_option("--data", common[name].data, "dataset directory (default $BCD_DATA_DIR, else generated)");
    d->add_option("--batches", dump_batches, "number of P×A batches");
    d->add_option("--out", common[name].out, "output directory")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    Common& opt = common[name];
    ExperimentConfig c = opt.config.resolve();

    if (sub == cfg) {
      std::cout << run_header(c).dump(2) << '\n';
      return 0;
    }

    if (sub == gen) {
      std::string out = data_root(opt.out);
      if (out.empty()) out = "data";
      const Dataset ds = generate_benchmark(c.synth());
      save_dataset(ds, out);
      write_json(fs::path(out) / "dataset.json", run_header(c));
      std::cerr << "wrote " << ds.samples.size() << " images to " << out << '\n';
      return 0;
    }

    if (sub == tr) {
      const Dataset ds = obtain_dataset(c, data_root(opt.data));
      const fs::path out = opt.out;
      fs::create_directories(out);
      const std::size_t classes = ClassMap::build(ds).size();
      BcdNet model(c, classes);
      std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
      if (!log) throw std::runtime_error("cannot write " + (out / "train_log.jsonl").string());
      const std::string hash = config_hash(c);
      log << run_header(c).dump() << '\n';
      train(model, ds, [&](const EpochRecord& r) {
        json j = r.to_json();
        j["config_hash"] = hash;
        log << j.dump() << '\n';
        log.flush();
        std::cerr << "epoch " << r.epoch << " loss " << r.loss.total << '\n';
      });
      save_checkpoint(model, classes, out / "checkpoint");
      return 0;
    }

    if (sub == ev) {
      json result;
      if (!opt.checkpoint.empty()) {
        auto model = load_checkpoint(opt.checkpoint);
        const Dataset ds = obtain_dataset(model->config(), data_root(opt.data));
        result = metrics_json(evaluate_model(*model, ds, max_rank));
        result.update(run_header(model->config()));
      } else {
        if (query_tns.empty() || query_labels.empty() || gallery_tns.empty() || gallery_labels.empty())
          throw ConfigError("evaluate needs --checkpoint or all of --query, --query-labels, --gallery, --gallery-labels");
        const auto q = read_embeddings(query_tns, query_labels);
        const auto g = read_embeddings(gallery_tns, gallery_labels);
        result = metrics_json(evaluate(q, g, max_rank));
        result.update(run_header(c));
      }
      if (opt.out.empty()) std::cout << result.dump(2) << '\n';
      else write_json(opt.out, result);
      return 0;
    }

    if (sub == ab) {
      const auto names = split_list(rows);
      if (names.empty()) throw ConfigError("--rows is empty");
      std::vector<ExperimentConfig> configs;
      for (const auto& r : names) {
        configs.push_back(apply_row(c, r));
        configs.back().validate();
      }
      const Dataset ds = obtain_dataset(c, data_root(opt.data));
      auto csv = open_csv(opt.out);
      csv << "row,seed,rank1,map,config_hash\n";
      json runs = json::array();
      for (std::size_t i = 0; i < names.size(); ++i) {
        const auto r = run_experiment(configs[i], ds);
        csv << names[i] << ',' << configs[i].seed << ',' << r.metrics.rank1 << ',' << r.metrics.map << ','
            << config_hash(configs[i]) << '\n';
        csv.flush();
        json entry = run_header(configs[i]);
        entry["row"] = names[i];
        entry["metrics"] = metrics_json(r.metrics);
        runs.push_back(entry);
        std::cerr << names[i] << ": rank1 " << r.metrics.rank1 << " map " << r.metrics.map << '\n';
      }
      json summary = run_header(c);
      summary["rows"] = runs;
      write_json(fs::path(opt.out).replace_extension(".json"), summary);
      return 0;
    }

    // Diagnostics.
    const Dataset ds = obtain_dataset(c, data_root(opt.data));
    auto model = model_for(c, opt.checkpoint, ds);
    const ExperimentConfig& mc = model->config();
    const fs::path out = opt.out;
    fs::create_directories(out);
    write_json(out / "run.json", run_header(mc));
    const auto batches = diagnostic_batches(ds, mc, dump_batches);
    NoGradGuard guard;

    if (name == "dump-supervision") {
      auto csv = open_csv(out / "supervision.csv");
      csv << "batch,channel";
      for (std::size_t k = 0; k < mc.parts; ++k) csv << ",part" << k;
      csv << '\n';
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto pass = model->forward(BcdNet::stack_images(ds, batches[b]), false);
        const auto& m = pass.supervision;
        write_tns(out / ("supervision_b" + std::to_string(b) + ".tns"), {m.channels, m.parts}, m.values);
        for (std::size_t ch = 0; ch < m.channels; ++ch) {
          csv << b << ',' << ch;
          for (std::size_t k = 0; k < m.parts; ++k) csv << ',' << m(ch, k);
          csv << '\n';
        }
      }
      return 0;
    }

    if (name == "dump-attention") {
      if (!mc.attention) throw ConfigError("dump-attention: the model has no attention modules");
      auto csv = open_csv(out / "attention.csv");
      csv << "batch,part,image,channel,weight\n";
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto pass = model->forward(BcdNet::stack_images(ds, batches[b]), false);
        for (std::size_t k = 0; k < mc.parts; ++k) {
          const Tensor& w = pass.attention[k];
          const Tensor& mean = pass.mean_attention[k];
          const std::size_t n = w.dim(0), ch = w.dim(1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < ch; ++j) csv << b << ',' << k << ',' << i << ',' << j << ',' << w[i * ch + j] << '\n';
          for (std::size_t j = 0; j < ch; ++j) csv << b << ',' << k << ",mean," << j << ',' << mean[j] << '\n';
        }
      }
      return 0;
    }

    auto csv = open_csv(out / "profiles.csv");
    csv << "batch,kind,part,row,value\n";
    const std::size_t h = model->feature_height();
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto pass = model->forward(BcdNet::stack_images(ds, batches[b]), false);
      for (std::size_t k = 0; k < mc.parts; ++k) {
        std::vector<double> target;
        try {
          target = part_target(k, mc.parts, h, mc.effective_gamma());
        } catch (const ConfigError&) {
          // gamma outside the band for this grid: profiles only
        }
        for (std::size_t l = 0; l < h; ++l) {
          csv << b << ",profile," << k << ',' << l << ',' << pass.profiles[k][l] << '\n';
          if (!target.empty()) csv << b << ",target," << k << ',' << l << ',' << target[l] << '\n';
        }
      }
      for (std::size_t l = 0; l < h; ++l) csv << b << ",holistic,," << l << ',' << pass.holistic_profile[l] << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

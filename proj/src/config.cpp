// Copyright 2026 The cmdl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cmdl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace cmdl {

using nlohmann::json;

namespace {

// Pulls a typed value while tracking which keys were consumed. Holds its
// node by value so call sites can pass freshly built subobjects.
class Section {
 public:
  Section(json node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path_ + "." + key + "' has the wrong type");
    }
  }

  json child(const char* key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? json::object() : *it;
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown config key '" + path_ + "." + it.key() + "'");
      }
    }
  }

 private:
  json node_;
  std::string path_;
  std::set<std::string> seen_;
};

TrainArm parse_arm(const std::string& s) {
  if (s == "full") return TrainArm::full;
  if (s == "distill_only") return TrainArm::distill_only;
  if (s == "align_only") return TrainArm::align_only;
  throw ConfigError("train.arm must be full | distill_only | align_only, got '" + s + "'");
}

std::string arm_name(TrainArm arm) {
  switch (arm) {
    case TrainArm::full: return "full";
    case TrainArm::distill_only: return "distill_only";
    case TrainArm::align_only: return "align_only";
  }
  return "full";
}

InitMode parse_init(const std::string& s) {
  if (s == "decoder") return InitMode::decoder;
  if (s == "scratch") return InitMode::scratch;
  throw ConfigError("train.init_mode must be decoder | scratch, got '" + s + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig cfg;
  Section top(root, "");
  top.get("seed", cfg.seed);

  {
    Section audio(top.child("audio"), "audio");
    audio.get("sample_rate", cfg.sample_rate);
    audio.get("n_fft", cfg.n_fft);
    audio.get("hop", cfg.hop);
    audio.get("n_mels", cfg.n_mels);
    audio.get("tone_ms", cfg.tone_ms);
    audio.get("noise_amp", cfg.noise_amp);
    audio.get("pitch_lo", cfg.pitch_lo);
    audio.get("pitch_hi", cfg.pitch_hi);
    audio.finish();
  }
  {
    Section model(top.child("model"), "model");
    model.get("h", cfg.h);
    model.get("lm_width", cfg.lm_width);
    model.get("n_queries", cfg.n_queries);
    model.get("enc_layers", cfg.enc_layers);
    model.get("dec_layers", cfg.dec_layers);
    model.get("lm_layers", cfg.lm_layers);
    model.get("heads", cfg.heads);
    model.get("vocab", cfg.vocab);
    model.get("max_positions", cfg.max_positions);
    model.finish();
  }
  {
    Section data(top.child("data"), "data");
    data.get("train", cfg.n_train);
    data.get("dev", cfg.n_dev);
    data.get("test", cfg.n_test);
    data.get("lm_train", cfg.lm_train);
    data.get("lm_held_out", cfg.lm_held_out);
    data.get("min_body", cfg.min_body);
    data.get("max_body", cfg.max_body);
    data.get("template_frac", cfg.template_frac);
    data.finish();
  }
  {
    Section lm(top.child("lm_pretrain"), "lm_pretrain");
    lm.get("steps", cfg.lm_pretrain.steps);
    lm.get("batch_size", cfg.lm_pretrain.batch_size);
    lm.get("lr", cfg.lm_pretrain.lr);
    lm.get("weight_decay", cfg.lm_pretrain.weight_decay);
    lm.get("warmup_fraction", cfg.lm_pretrain.warmup_fraction);
    lm.get("ppl_margin", cfg.lm_pretrain.ppl_margin);
    lm.finish();
  }
  {
    Section donor(top.child("donor_pretrain"), "donor_pretrain");
    donor.get("steps", cfg.donor_pretrain.steps);
    donor.get("batch_size", cfg.donor_pretrain.batch_size);
    donor.get("lr", cfg.donor_pretrain.lr);
    donor.get("weight_decay", cfg.donor_pretrain.weight_decay);
    donor.get("warmup_fraction", cfg.donor_pretrain.warmup_fraction);
    donor.get("target_acc", cfg.donor_pretrain.target_acc);
    donor.get("min_acc", cfg.donor_pretrain.min_acc);
    donor.get("eval_every", cfg.donor_pretrain.eval_every);
    donor.finish();
  }
  {
    Section train(top.child("train"), "train");
    train.get("total_steps", cfg.train.total_steps);
    train.get("batch_size", cfg.train.batch_size);
    train.get("base_lr", cfg.train.base_lr);
    train.get("weight_decay", cfg.train.weight_decay);
    train.get("warmup_fraction", cfg.train.warmup_fraction);
    std::string arm = arm_name(cfg.train.arm);
    train.get("arm", arm);
    cfg.train.arm = parse_arm(arm);
    std::string init = cfg.train.init_mode == InitMode::decoder ? "decoder" : "scratch";
    train.get("init_mode", init);
    cfg.train.init_mode = parse_init(init);
    train.get("freeze_encoder", cfg.train.freeze_encoder);
    train.get("lambda_con", cfg.train.lambda_con);
    train.get("clip_norm", cfg.train.clip_norm);
    train.get("beta1", cfg.train.beta1);
    train.get("beta2", cfg.train.beta2);
    train.get("adam_eps", cfg.train.adam_eps);
    train.finish();
  }
  {
    Section toylab(top.child("toylab"), "toylab");
    toylab.get("dims", cfg.toylab_dims);
    toylab.get("vocab", cfg.toylab_vocab);
    toylab.get("steps", cfg.toylab_steps);
    toylab.get("runs", cfg.toylab_runs);
    toylab.get("lr", cfg.toylab_lr);
    toylab.get("threads", cfg.toylab_threads);
    toylab.get("lr_sweep", cfg.toylab_lr_sweep);
    toylab.finish();
  }
  {
    Section eval(top.child("eval"), "eval");
    eval.get("bootstrap_resamples", cfg.bootstrap_resamples);
    eval.finish();
  }
  top.finish();

  cfg.train.seed = cfg.seed;
  if (cfg.max_body >= cfg.n_queries) {
    throw ConfigError("data.max_body (" + std::to_string(cfg.max_body) +
                      ") must stay below model.n_queries (" + std::to_string(cfg.n_queries) + ")");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
  json root;
  root["seed"] = cfg.seed;
  root["audio"] = {{"sample_rate", cfg.sample_rate}, {"n_fft", cfg.n_fft},   {"hop", cfg.hop},
                   {"n_mels", cfg.n_mels},           {"tone_ms", cfg.tone_ms}, {"noise_amp", cfg.noise_amp},
                   {"pitch_lo", cfg.pitch_lo},       {"pitch_hi", cfg.pitch_hi}};
  root["model"] = {{"h", cfg.h},
                   {"lm_width", cfg.lm_width},
                   {"n_queries", cfg.n_queries},
                   {"enc_layers", cfg.enc_layers},
                   {"dec_layers", cfg.dec_layers},
                   {"lm_layers", cfg.lm_layers},
                   {"heads", cfg.heads},
                   {"vocab", cfg.vocab},
                   {"max_positions", cfg.max_positions}};
  root["data"] = {{"train", cfg.n_train},         {"dev", cfg.n_dev},
                  {"test", cfg.n_test},           {"lm_train", cfg.lm_train},
                  {"lm_held_out", cfg.lm_held_out}, {"min_body", cfg.min_body},
                  {"max_body", cfg.max_body},     {"template_frac", cfg.template_frac}};
  root["lm_pretrain"] = {{"steps", cfg.lm_pretrain.steps},
                         {"batch_size", cfg.lm_pretrain.batch_size},
                         {"lr", cfg.lm_pretrain.lr},
                         {"weight_decay", cfg.lm_pretrain.weight_decay},
                         {"warmup_fraction", cfg.lm_pretrain.warmup_fraction},
                         {"ppl_margin", cfg.lm_pretrain.ppl_margin}};
  root["donor_pretrain"] = {{"steps", cfg.donor_pretrain.steps},
                            {"batch_size", cfg.donor_pretrain.batch_size},
                            {"lr", cfg.donor_pretrain.lr},
                            {"weight_decay", cfg.donor_pretrain.weight_decay},
                            {"warmup_fraction", cfg.donor_pretrain.warmup_fraction},
                            {"target_acc", cfg.donor_pretrain.target_acc},
                            {"min_acc", cfg.donor_pretrain.min_acc},
                            {"eval_every", cfg.donor_pretrain.eval_every}};
  root["train"] = {{"total_steps", cfg.train.total_steps},
                   {"batch_size", cfg.train.batch_size},
                   {"base_lr", cfg.train.base_lr},
                   {"weight_decay", cfg.train.weight_decay},
                   {"warmup_fraction", cfg.train.warmup_fraction},
                   {"arm", arm_name(cfg.train.arm)},
                   {"init_mode", cfg.train.init_mode == InitMode::decoder ? "decoder" : "scratch"},
                   {"freeze_encoder", cfg.train.freeze_encoder},
                   {"lambda_con", cfg.train.lambda_con},
                   {"clip_norm", cfg.train.clip_norm},
                   {"beta1", cfg.train.beta1},
                   {"beta2", cfg.train.beta2},
                   {"adam_eps", cfg.train.adam_eps}};
  root["toylab"] = {{"dims", cfg.toylab_dims}, {"vocab", cfg.toylab_vocab},
                    {"steps", cfg.toylab_steps}, {"runs", cfg.toylab_runs},
                    {"lr", cfg.toylab_lr},       {"threads", cfg.toylab_threads},
                    {"lr_sweep", cfg.toylab_lr_sweep}};
  root["eval"] = {{"bootstrap_resamples", cfg.bootstrap_resamples}};
  return root.dump(2) + "\n";
}

namespace {

ManifestRecord parse_manifest_line(const std::string& line, size_t line_no, size_t vocab) {
  json row;
  try {
    row = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("manifest line " + std::to_string(line_no) + ": invalid JSON (" + e.what() + ")");
  }
  if (!row.is_object()) {
    throw DataError("manifest line " + std::to_string(line_no) + ": expected an object");
  }
  for (auto it = row.begin(); it != row.end(); ++it) {
    const std::string& k = it.key();
    if (k != "id" && k != "transcript" && k != "audio" && k != "split") {
      throw DataError("manifest line " + std::to_string(line_no) + ": unknown field '" + k + "'");
    }
  }
  ManifestRecord rec;
  try {
    rec.id = row.at("id").get<std::string>();
    const std::string transcript = row.at("transcript").get<std::string>();
    rec.audio = row.at("audio").get<std::string>();
    rec.split = row.at("split").get<std::string>();
    std::istringstream ts(transcript);
    int tok;
    while (ts >> tok) rec.transcript.push_back(tok);
    if (!ts.eof()) throw DataError("bad transcript");
  } catch (const json::exception&) {
    throw DataError("manifest line " + std::to_string(line_no) +
                    ": need string fields id, transcript, audio, split");
  } catch (const DataError&) {
    throw DataError("manifest line " + std::to_string(line_no) +
                    ": transcript must be space-separated token ids");
  }
  if (rec.split != "train" && rec.split != "dev" && rec.split != "test") {
    throw DataError("manifest line " + std::to_string(line_no) + ": split '" + rec.split +
                    "' is not train|dev|test");
  }
  for (int tok : rec.transcript) {
    if (tok < 0 || static_cast<size_t>(tok) >= vocab) {
      throw DataError("manifest line " + std::to_string(line_no) + ": token id " +
                      std::to_string(tok) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  return rec;
}

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::string& text, size_t vocab) {
  std::vector<ManifestRecord> out;
  std::unordered_set<std::string> ids;
  std::istringstream is(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto rec = parse_manifest_line(line, line_no, vocab);
    if (!ids.insert(rec.id).second) {
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate id '" + rec.id + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ManifestRecord> load_manifest(const std::string& path, size_t vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), vocab);
}

std::string manifest_text(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json row;
    row["id"] = rec.id;
    std::string transcript;
    for (size_t i = 0; i < rec.transcript.size(); ++i) {
      transcript += (i ? " " : "") + std::to_string(rec.transcript[i]);
    }
    row["transcript"] = transcript;
    row["audio"] = rec.audio;
    row["split"] = rec.split;
    out += row.dump() + "\n";
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << manifest_text(records);
  if (!out) throw IoError("failed writing manifest to " + path);
}

}  // namespace cmdl

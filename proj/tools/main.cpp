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

// Command-line entry point: synth | pretrain | train | eval | toylab |
// gradcheck. Every command is a pure function of (config, seed, inputs);
// reruns produce byte-identical outputs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cmdl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cmdl;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_run_config(opts.config_path);
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    cfg.train.seed = opts.seed;
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

DataBundle bundle_from_manifest(const RunConfig& cfg, const fs::path& out_dir) {
  DataBundle bundle;
  bundle.geometry = cfg.geometry();
  bundle.language = language_for(cfg);
  bundle.prompt = default_prompt(bundle.language);
  bundle.synth = synth_for(cfg);
  bundle.lm_corpus = corpus_for(cfg, bundle.language);

  const fs::path manifest = out_dir / "manifest.jsonl";
  if (!fs::exists(manifest)) {
    throw DataError("manifest " + manifest.string() + " not found; run `synth` first");
  }
  auto records = load_manifest(manifest.string(), cfg.vocab);
  auto examples =
      examples_from_manifest(records, cfg, bundle.synth, bundle.language, out_dir.string());
  for (auto& ex : examples) {
    if (ex.split == "train") {
      bundle.train.push_back(std::move(ex));
    } else if (ex.split == "dev") {
      bundle.dev.push_back(std::move(ex));
    } else {
      bundle.test.push_back(std::move(ex));
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& opts, bool synthetic_markers) {
  RunConfig cfg = resolve_config(opts);
  const fs::path out_dir(opts.out_dir);
  fs::create_directories(out_dir);
  if (!synthetic_markers) fs::create_directories(out_dir / "wav");

  auto bundle = build_data(cfg);
  validate_synth_spec(bundle.synth, bundle.geometry);
  auto records = manifest_from_bundle(bundle, (out_dir / "wav").string(), synthetic_markers);
  write_manifest((out_dir / "manifest.jsonl").string(), records);
  std::printf("synth: %zu train / %zu dev / %zu test examples -> %s\n", bundle.train.size(),
              bundle.dev.size(), bundle.test.size(), (out_dir / "manifest.jsonl").c_str());
  return 0;
}

int cmd_pretrain(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  const fs::path out_dir(opts.out_dir);
  auto bundle = bundle_from_manifest(cfg, out_dir);

  PretrainReports reports;
  auto models = pretrain_all(bundle, cfg, &reports);

  save_checkpoint(teacher_params(models.teacher), (out_dir / "teacher.ckpt").string());
  save_checkpoint(asr_params(models.asr), (out_dir / "donor.ckpt").string());

  std::string lm_csv = "step,loss\n";
  char buf[128];
  for (const auto& [step, loss] : reports.lm.loss_curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", step, loss);
    lm_csv += buf;
  }
  write_text(out_dir / "lm_pretrain_metrics.csv", lm_csv);

  std::string donor_csv = "step,held_out_token_accuracy\n";
  for (const auto& [step, acc] : reports.donor.accuracy_curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", step, acc);
    donor_csv += buf;
  }
  write_text(out_dir / "donor_pretrain_metrics.csv", donor_csv);

  std::string summary = "metric,value\n";
  std::snprintf(buf, sizeof(buf), "lm_held_out_ppl,%.12g\n", reports.lm.held_out_ppl);
  summary += buf;
  std::snprintf(buf, sizeof(buf), "lm_unigram_ppl,%.12g\n", reports.lm.unigram_ppl);
  summary += buf;
  std::snprintf(buf, sizeof(buf), "donor_held_out_token_accuracy,%.12g\n",
                reports.donor.held_out_token_accuracy);
  summary += buf;
  std::snprintf(buf, sizeof(buf), "donor_steps_run,%zu\n", reports.donor.steps_run);
  summary += buf;
  write_text(out_dir / "pretrain_summary.csv", summary);

  std::printf("pretrain: lm ppl %.3f (unigram %.3f), donor token accuracy %.3f\n",
              reports.lm.held_out_ppl, reports.lm.unigram_ppl,
              reports.donor.held_out_token_accuracy);
  return 0;
}

std::string arm_tag(TrainArm arm) {
  switch (arm) {
    case TrainArm::full: return "full";
    case TrainArm::distill_only: return "distill_only";
    case TrainArm::align_only: return "align_only";
  }
  return "full";
}

int cmd_train(const CommonOpts& opts, const std::string& arm_flag, const std::string& init_flag) {
  RunConfig cfg = resolve_config(opts);
  if (arm_flag == "distill_only") {
    cfg.train.arm = TrainArm::distill_only;
  } else if (arm_flag == "align_only") {
    cfg.train.arm = TrainArm::align_only;
  } else if (arm_flag == "full" || arm_flag.empty()) {
    if (!arm_flag.empty()) cfg.train.arm = TrainArm::full;
  } else {
    throw ConfigError("--arm must be full | distill_only | align_only, got '" + arm_flag + "'");
  }
  if (init_flag == "scratch") {
    cfg.train.init_mode = InitMode::scratch;
  } else if (init_flag == "decoder") {
    cfg.train.init_mode = InitMode::decoder;
  } else if (!init_flag.empty()) {
    throw ConfigError("--init must be decoder | scratch, got '" + init_flag + "'");
  }

  const fs::path out_dir(opts.out_dir);
  auto bundle = bundle_from_manifest(cfg, out_dir);

  auto teacher = make_teacher_shell(cfg);
  auto tp = teacher_params(teacher);
  load_checkpoint_into((out_dir / "teacher.ckpt").string(), tp);
  teacher.set_frozen(true);
  auto asr = make_asr_shell(cfg);
  auto ap = asr_params(asr);
  load_checkpoint_into((out_dir / "donor.ckpt").string(), ap);

  Models models{std::move(teacher), std::move(asr)};
  auto student = make_student(models, cfg, cfg.train.init_mode, cfg.seed);

  const uint64_t teacher_sum_before = param_checksum(teacher_params(models.teacher));
  auto rows =
      train_student(models.teacher, student, bundle.train, cfg.train, bundle.prompt, bundle.geometry);
  if (param_checksum(teacher_params(models.teacher)) != teacher_sum_before) {
    throw TrainingError("teacher parameters changed during distillation");
  }

  const std::string tag =
      arm_tag(cfg.train.arm) + "_" + (cfg.train.init_mode == InitMode::decoder ? "decoder" : "scratch");
  save_checkpoint(student_params(student), (out_dir / ("student_" + tag + ".ckpt")).string());
  write_text(out_dir / ("metrics_" + tag + ".csv"), metrics_csv(rows));
  std::printf("train[%s]: %zu steps, final combined %.4f, reference KL %.4f\n", tag.c_str(),
              rows.size(), rows.back().combined, rows.back().reference_kl);
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::vector<std::string>& checkpoints) {
  RunConfig cfg = resolve_config(opts);
  const fs::path out_dir(opts.out_dir);
  auto bundle = bundle_from_manifest(cfg, out_dir);

  auto teacher = make_teacher_shell(cfg);
  auto tp = teacher_params(teacher);
  load_checkpoint_into((out_dir / "teacher.ckpt").string(), tp);
  teacher.set_frozen(true);

  std::string summary = "system,first_token_agreement,weighted_f1,accuracy,n_test,n_templates\n";
  char buf[256];

  // Teacher text path against itself is the sanity row.
  {
    auto cls = classify_templates(teacher, nullptr, bundle.test, bundle);
    std::snprintf(buf, sizeof(buf), "teacher_text,1,%.12g,%.12g,%zu,%zu\n", cls.weighted_f1_score,
                  cls.accuracy_score, bundle.test.size(), cls.n);
    summary += buf;
    write_text(out_dir / "classification_teacher_text.csv", eval_records_csv(cls.records));
  }

  std::vector<std::vector<double>> agreement_indicators;
  std::vector<std::string> names;
  for (const auto& ckpt : checkpoints) {
    auto student = make_student_shell(cfg);
    auto sp = student_params(student);
    load_checkpoint_into(ckpt, sp);

    const std::string name = fs::path(ckpt).stem().string();
    auto agreement = first_token_agreement(student, teacher, bundle.test, bundle.prompt);
    auto cls = classify_templates(teacher, &student, bundle.test, bundle);

    std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%zu,%zu\n", name.c_str(), agreement.rate,
                  cls.weighted_f1_score, cls.accuracy_score, bundle.test.size(), cls.n);
    summary += buf;
    write_text(out_dir / ("agreement_" + name + ".csv"), eval_records_csv(agreement.records));
    write_text(out_dir / ("classification_" + name + ".csv"), eval_records_csv(cls.records));

    std::vector<double> indicators;
    indicators.reserve(agreement.records.size());
    for (const auto& r : agreement.records) indicators.push_back(r.metric);
    agreement_indicators.push_back(std::move(indicators));
    names.push_back(name);
    std::printf("eval[%s]: agreement %.4f, weighted F1 %.4f, accuracy %.4f\n", name.c_str(),
                agreement.rate, cls.weighted_f1_score, cls.accuracy_score);
  }

  if (agreement_indicators.size() >= 2) {
    std::string boot = "system_a,system_b,observed_diff,p_value,ci_lo,ci_hi,resamples\n";
    for (size_t i = 0; i + 1 < agreement_indicators.size(); ++i) {
      for (size_t j = i + 1; j < agreement_indicators.size(); ++j) {
        auto rep = paired_bootstrap(agreement_indicators[i], agreement_indicators[j],
                                    cfg.bootstrap_resamples, cfg.seed);
        std::snprintf(buf, sizeof(buf), "%s,%s,%.12g,%.12g,%.12g,%.12g,%zu\n", names[i].c_str(),
                      names[j].c_str(), rep.observed_diff, rep.p_value, rep.ci_lo, rep.ci_hi,
                      rep.resamples);
        boot += buf;
        std::printf("bootstrap %s vs %s: diff %.4f, p %.4g\n", names[i].c_str(), names[j].c_str(),
                    rep.observed_diff, rep.p_value);
      }
    }
    write_text(out_dir / "bootstrap.csv", boot);
  }
  write_text(out_dir / "eval_summary.csv", summary);
  return 0;
}

int cmd_toylab(const CommonOpts& opts, const std::vector<size_t>& dims_flag, bool lr_sweep_flag) {
  RunConfig cfg = resolve_config(opts);
  const fs::path out_dir(opts.out_dir);
  fs::create_directories(out_dir);

  ToyRunConfig lab;
  lab.vocab = cfg.toylab_vocab;
  lab.steps = cfg.toylab_steps;
  lab.runs = cfg.toylab_runs;
  lab.lr = cfg.toylab_lr;
  lab.seed = cfg.seed;
  lab.threads = cfg.toylab_threads;
  const auto dims = dims_flag.empty() ? cfg.toylab_dims : dims_flag;

  SweepResult result;
  bool with_lr = false;
  if (lr_sweep_flag && !cfg.toylab_lr_sweep.empty()) {
    result = sweep_lr(dims, lab, cfg.toylab_lr_sweep);
    with_lr = true;
  } else if (lr_sweep_flag) {
    result = sweep_lr(dims, lab, {1e-3, 1e-2, 1e-1, 1.0});
    with_lr = true;
  } else {
    result = sweep(dims, lab);
  }
  write_text(out_dir / "toylab.csv", sweep_csv(result, with_lr));

  std::string summary = with_lr ? "dim,lr,mean_l2,std_l2,mean_kl,std_kl,flagged\n"
                                : "dim,mean_l2,std_l2,mean_kl,std_kl,flagged\n";
  char buf[256];
  for (const auto& per : result.per_dim) {
    if (with_lr) {
      std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g,%zu\n", per.config.dim,
                    per.config.lr, per.mean_l2, per.std_l2, per.mean_kl, per.std_kl,
                    per.flagged_runs);
    } else {
      std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%zu\n", per.config.dim,
                    per.mean_l2, per.std_l2, per.mean_kl, per.std_kl, per.flagged_runs);
    }
    summary += buf;
    std::fputs(buf, stdout);
  }
  write_text(out_dir / "toylab_summary.csv", summary);
  return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  auto results = run_gradcheck_suite(cfg.seed);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("gradcheck %-16s max relative error %.3e  [%s]\n", r.name.c_str(), r.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  if (!ok) throw NumericError("gradient check exceeded the 1e-4 tolerance");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modal context distillation lab"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "master seed override")->each([&](const std::string&) {
      opts.seed_set = true;
    });
  };

  bool synthetic_markers = false;
  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus, manifest and audio");
  add_common(synth);
  synth->add_flag("--synthetic-markers", synthetic_markers,
                  "record 'synthetic' markers instead of writing WAV files");

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the teacher LM and the donor ASR model");
  add_common(pretrain);

  std::string arm_flag, init_flag;
  auto* train = app.add_subcommand("train", "distill the student against the frozen teacher");
  add_common(train);
  train->add_option("--arm", arm_flag, "full | distill_only | align_only");
  train->add_option("--init", init_flag, "decoder | scratch");

  std::vector<std::string> checkpoints;
  auto* eval = app.add_subcommand("eval", "evaluate student checkpoints against the teacher");
  add_common(eval);
  eval->add_option("--checkpoints", checkpoints, "student checkpoint paths")->expected(-1);

  std::vector<size_t> dims_flag;
  bool lr_sweep_flag = false;
  auto* toylab = app.add_subcommand("toylab", "hidden-state L2 vs direct-KL optimization study");
  add_common(toylab);
  toylab->add_option("--dims", dims_flag, "embedding dimensions to sweep")->expected(-1);
  toylab->add_flag("--lr-sweep", lr_sweep_flag, "sweep learning rates and add an lr column");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of composed gradients");
  add_common(gradcheck);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(opts, synthetic_markers);
    if (pretrain->parsed()) return cmd_pretrain(opts);
    if (train->parsed()) return cmd_train(opts, arm_flag, init_flag);
    if (eval->parsed()) return cmd_eval(opts, checkpoints);
    if (toylab->parsed()) return cmd_toylab(opts, dims_flag, lr_sweep_flag);
    if (gradcheck->parsed()) return cmd_gradcheck(opts);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

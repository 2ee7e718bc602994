// Copyright 2026 The xstitch Authors
// SPDX-License-Identifier: Apache-2.0
//
// xstitch gen-data | train | eval | predict | grad-check
//
// Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xstitch/xstitch.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xstitch;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p.string(), "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(p.string(), "cannot open for writing");
  out << text;
  if (!out) throw IoError(p.string(), "write failed");
}

// SHA-1 over "blob <size>\0<content>", as git hashes file contents.
std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

// Every regular file under `dir`, sorted by relative path.
json hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[f.generic_string()] = git_blob_sha1(read_file(dir / f));
  return out;
}

void print_json(const json& j, const std::string& out_path) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
}

// ---- gen-data --------------------------------------------------------------

struct GenArgs {
  std::string task;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const Task task = parse_task(a.task);
  const Corpus c = gen_corpus(task, a.n, a.seed);
  write_corpus(a.out, c, task, a.n, a.seed);
  std::cerr << "wrote " << c.train.size() << "/" << c.val.size() << "/" << c.test.size() << " utterances to "
            << a.out << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.overrides);
  if (cfg.data_dir.empty()) throw ConfigError("paths.data is not set");
  if (cfg.out_dir.empty()) throw ConfigError("paths.out is not set");
  if (!fs::is_directory(cfg.data_dir)) throw IoError(cfg.data_dir.string(), "data directory not found");
  const auto train_set = read_split(cfg.data_dir, "train");
  const auto val_set = read_split(cfg.data_dir, "val");

  Model model = make_model(cfg.model, build_vocab(train_set, cfg.model.vocab_size), cfg.seed);
  TrainHooks hooks;
  if (!a.quiet)
    hooks.on_step = [](std::size_t step, double loss, const Model&) {
      if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << "\n";
    };
  const TrainResult result = train(model, train_set, val_set, cfg.train, hooks);

  fs::create_directories(cfg.out_dir);
  CheckpointMeta meta = meta_for(model);
  meta.train = cfg.train;
  meta.step = result.best_step;
  meta.metric = result.best_metric;
  meta.extra = {{"best_epoch", result.best_epoch}, {"seed", cfg.seed}};
  save_model(cfg.out_dir / "model.ckpt", model, meta);
  write_text(cfg.out_dir / "history.json", to_json(result).dump(2) + "\n");

  json manifest;
  manifest["config"] = to_json(cfg);
  manifest["seed"] = cfg.seed;
  manifest["overrides"] = a.overrides;
  manifest["inputs"] = {{"config", {{"path", a.config}, {"sha1", git_blob_sha1(read_file(a.config))}}},
                        {"data", {{"path", cfg.data_dir.string()}, {"files", hash_tree(cfg.data_dir)}}}};
  manifest["outputs"] = {{"model.ckpt", git_blob_sha1(read_file(cfg.out_dir / "model.ckpt"))},
                         {"history.json", git_blob_sha1(read_file(cfg.out_dir / "history.json"))}};
  write_text(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cerr << "best epoch " << result.best_epoch << " val metric " << result.best_metric << "; wrote "
            << (cfg.out_dir / "model.ckpt").string() << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, split = "test", out;
};

int run_eval(const EvalArgs& a) {
  const Model model = load_model(a.ckpt);
  const auto utts = read_split(a.data, a.split);
  json report = evaluate(model, utts);
  report["split"] = a.split;
  print_json(report, a.out);
  return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string ckpt, input, text, out, attn_out;
};

json prediction_json(const Model& m, const Utterance& u, const Prediction& p) {
  json j;
  j["id"] = u.id;
  switch (m.config.task) {
    case Task::punct: {
      std::vector<RichTag> tags;
      for (int t : p.tags) tags.push_back(RichTag::from_id(t));
      j["rich"] = decode_tags(u.tokens, tags);
      std::vector<std::string> names;
      for (const auto& t : tags) names.push_back(to_string(t));
      j["tags"] = names;
      break;
    }
    case Task::roles: {
      std::vector<std::string> names;
      for (int t : p.tags) names.push_back(m.spec.names[static_cast<std::size_t>(t)]);
      j["tags"] = names;
      json turns = json::array();
      for (const auto& t : segment_turns(p.tags))
        turns.push_back({{"start", t.start}, {"end", t.end}, {"role", m.spec.names[static_cast<std::size_t>(t.label)]}});
      j["turns"] = turns;
      break;
    }
    case Task::sentiment:
      j["label"] = p.label;
      j["sentiment"] = p.label - 3;
      break;
    case Task::intent:
      j["intent"] = p.label;
      j["entity"] = p.label2;
      break;
  }
  if (p.path) j["fusion_path"] = std::string(to_string(*p.path));
  return j;
}

json matrix_json(const Tensor& t) {
  json rows = json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) rows.push_back(std::vector<double>(t.row(i).begin(), t.row(i).end()));
  return rows;
}

int run_predict(const PredictArgs& a) {
  if (a.input.empty() == a.text.empty()) throw UsageError("predict needs exactly one of --input or --text");
  const Model model = load_model(a.ckpt);
  std::vector<Utterance> utts;
  if (!a.input.empty()) {
    utts = read_records(a.input);
  } else {
    Utterance u;
    u.id = "text";
    u.tokens = encode_rich_text(a.text).tokens;
    utts.push_back(std::move(u));
  }
  std::ostringstream lines;
  std::ostringstream attn;
  for (const auto& u : utts) {
    lines << prediction_json(model, u, predict(model, u)).dump() << "\n";
    if (!a.attn_out.empty() && u.frames && model.xstitch) {
      const auto [t2s, s2t] = attention_maps(model, u);
      attn << json{{"id", u.id}, {"text_to_speech", matrix_json(t2s)}, {"speech_to_text", matrix_json(s2t)}}.dump()
           << "\n";
    }
  }
  if (a.out.empty())
    std::cout << lines.str();
  else
    write_text(a.out, lines.str());
  if (!a.attn_out.empty()) {
    if (!model.xstitch) throw ConfigError("--attn-out needs an xse checkpoint");
    write_text(a.attn_out, attn.str());
  }
  return 0;
}

// ---- grad-check ------------------------------------------------------------

struct GradArgs {
  std::string config;
  std::vector<std::string> overrides;
  double tol = 1e-4;
  double step = 1e-5;
  std::string out;
};

int run_grad_check(const GradArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.overrides);
  const Corpus corpus = gen_corpus(cfg.model.task, kMinCorpusSize, cfg.seed);
  const std::vector<Utterance> pair(corpus.train.begin(), corpus.train.begin() + 2);
  Model model = make_model(cfg.model, build_vocab(corpus.train, cfg.model.vocab_size), cfg.seed);
  const Batch batch = batch_pad(pair, model.vocab);
  const LossFn loss = [&](ParamStore& store, bool grads) {
    std::swap(store, model.store);
    const double l = batch_loss(model, batch, grads).loss;
    std::swap(store, model.store);
    return l;
  };
  ParamStore params = model.store;
  GradCheckOptions opt;
  opt.tol = a.tol;
  opt.step = a.step;
  opt.seed = cfg.seed;
  const GradCheckReport report = grad_check(loss, params, opt);
  print_json(to_json(report), a.out);
  for (const auto& e : report.entries)
    if (!e.pass) std::cerr << "FAIL " << e.name << " max rel error " << e.max_rel_error << "\n";
  std::cerr << (report.pass ? "grad-check passed" : "grad-check FAILED") << " (" << report.entries.size()
            << " tensors, tol " << a.tol << ")\n";
  return report.pass ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-stitched speech and text encoder: data, training, evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen_cmd->add_option("--task", gen.task, "punct | roles | sentiment | intent")->required();
  gen_cmd->add_option("--n", gen.n, "Number of utterances (>= 30)")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", tr.config, "Key-value config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--set", tr.overrides, "Override a config key (key=value); repeatable");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-step progress");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", ev.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out", ev.out, "Write metrics JSON here instead of stdout");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Predict tags or labels");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--input", pr.input, "JSON-lines records")->check(CLI::ExistingFile);
  predict_cmd->add_option("--text", pr.text, "A single sentence (text only)");
  predict_cmd->add_option("--out", pr.out, "Write predictions here instead of stdout");
  predict_cmd->add_option("--attn-out", pr.attn_out, "Write cross-attention maps (JSON lines)");

  GradArgs gc;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of the model's gradients");
  grad_cmd->add_option("--config", gc.config, "Key-value config file")->required()->check(CLI::ExistingFile);
  grad_cmd->add_option("--set", gc.overrides, "Override a config key (key=value); repeatable");
  grad_cmd->add_option("--tol", gc.tol, "Relative error tolerance");
  grad_cmd->add_option("--step", gc.step, "Central-difference step");
  grad_cmd->add_option("--out", gc.out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*predict_cmd) return run_predict(pr);
    if (*grad_cmd) return run_grad_check(gc);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << json{{"error", "io"}, {"path", e.path()}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  } catch (const ConfigError& e) {
    std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  } catch (const DataError& e) {
    std::cerr << json{{"error", "data"}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  } catch (const NumericError& e) {
    std::cerr << json{{"error", "numeric"}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  } catch (const DimensionError& e) {
    std::cerr << json{{"error", "dimension"}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "runtime"}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

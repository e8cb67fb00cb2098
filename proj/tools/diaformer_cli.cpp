// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "diaformer/diaformer.h"
#include "httplib.h"
#include "json.hpp"
#include "service/session_service.hpp"

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kBindEnv = "DIAFORMER_BIND";
constexpr const char* kDefaultBind = "127.0.0.1:8080";

int report(df_status status) {
  if (status == DF_OK) return 0;
  std::cerr << "error (" << df_status_name(status) << "): " << df_last_error() << '\n';
  return 1;
}

std::string take(char* s) {
  std::string out(s ? s : "");
  df_string_free(s);
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

struct InferenceFlags {
  std::optional<std::size_t> max_turns;
  std::optional<double> rho_e, rho_p;

  void add(CLI::App* cmd) {
    cmd->add_option("--max-turns", max_turns, "Inquiry turn budget (default 20)");
    cmd->add_option("--rho-e", rho_e, "END-probability stop threshold (default 0.9)");
    cmd->add_option("--rho-p", rho_p, "Candidate-probability floor (default 0.01)");
  }
  json to_json() const {
    json j = json::object();
    if (max_turns) j["max_turns"] = *max_turns;
    if (rho_e) j["rho_e"] = *rho_e;
    if (rho_p) j["rho_p"] = *rho_p;
    return j;
  }
};

class ModelHandle {
 public:
  ~ModelHandle() { df_model_free(model_); }
  df_status load(const std::string& path) { return df_model_load(path.c_str(), &model_); }
  const df_model* get() const { return model_; }

 private:
  df_model* model_ = nullptr;
};

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diaformer: automatic diagnosis via symptom sequence generation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", df_version());

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Write a synthetic dataset");
  std::string gen_spec, gen_out;
  std::uint64_t gen_seed = 20260417, gen_records = 0;
  bool gen_print_spec = false;
  gen->add_option("--spec", gen_spec, "Generator spec JSON (default: built-in spec)")
      ->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--records", gen_records, "Number of records (default: from spec)");
  gen->add_option("--out", gen_out, "Output dataset path");
  gen->add_flag("--print-spec", gen_print_spec, "Print the built-in spec and exit");

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_data, train_config, train_out, train_metrics;
  std::optional<std::size_t> train_epochs;
  std::optional<std::uint64_t> train_seed;
  std::optional<double> train_lr;
  train->add_option("--data", train_data, "Training dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--config", train_config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--metrics", train_metrics, "Per-epoch metrics log (JSON lines)");
  train->add_option("--epochs", train_epochs, "Override epochs");
  train->add_option("--seed", train_seed, "Override training seed");
  train->add_option("--lr", train_lr, "Override learning rate");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with the user simulator");
  std::string eval_ckpt, eval_data, eval_out, eval_transcripts;
  std::size_t eval_threads = 1;
  InferenceFlags eval_flags;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Test dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Write metrics JSON here as well as stdout");
  eval->add_option("--transcripts", eval_transcripts, "Per-record dialogue transcripts (JSON lines)");
  eval->add_option("--threads", eval_threads, "Worker threads")->check(CLI::PositiveNumber);
  eval_flags.add(eval);

  // baseline
  auto* base = app.add_subcommand("baseline", "Explicit-symptom-only linear classifier");
  std::string base_train, base_test;
  base->add_option("--train", base_train, "Training dataset")->required()->check(CLI::ExistingFile);
  base->add_option("--test", base_test, "Test dataset")->required()->check(CLI::ExistingFile);

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the training loss");
  json grad_opts = json::object();
  std::size_t g_layers = 2, g_hidden = 32, g_heads = 2;
  std::uint64_t g_seed = 7;
  std::size_t g_max_entries = 0;
  double g_tol = 1e-4;
  grad->add_option("--layers", g_layers);
  grad->add_option("--hidden", g_hidden);
  grad->add_option("--heads", g_heads);
  grad->add_option("--seed", g_seed);
  grad->add_option("--tolerance", g_tol, "Maximum accepted relative error");
  grad->add_option("--max-entries", g_max_entries, "Entries sampled per tensor (0 checks all)");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
  std::string serve_ckpt, serve_bind;
  std::size_t serve_ttl_min = 30;
  InferenceFlags serve_flags;
  serve->add_option("--checkpoint", serve_ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  serve->add_option("--bind", serve_bind,
                    std::string("host:port (default $") + kBindEnv + " or " + kDefaultBind + ")");
  serve->add_option("--ttl-minutes", serve_ttl_min, "Idle session lifetime")->check(CLI::PositiveNumber);
  serve_flags.add(serve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (gen_print_spec) {
        char* spec = nullptr;
        if (const auto st = df_default_generator_spec(&spec)) return report(st);
        std::cout << json::parse(take(spec)).dump(2) << '\n';
        return 0;
      }
      if (gen_out.empty()) throw CLI::RequiredError("--out");
      return report(df_generate_data(gen_spec.empty() ? nullptr : gen_spec.c_str(), gen_seed,
                                     gen_records, gen_out.c_str()));
    }

    if (*train) {
      json config = train_config.empty() ? json::object() : read_json_file(train_config);
      if (train_epochs) config["epochs"] = *train_epochs;
      if (train_seed) config["seed"] = *train_seed;
      if (train_lr) config["lr"] = *train_lr;
      const auto st = df_train(train_data.c_str(), config.dump().c_str(), train_out.c_str(),
                               train_metrics.empty() ? nullptr : train_metrics.c_str());
      if (st == DF_OK) std::cerr << "wrote " << train_out << '\n';
      return report(st);
    }

    if (*eval) {
      ModelHandle model;
      if (const auto st = model.load(eval_ckpt)) return report(st);
      json opts = eval_flags.to_json();
      opts["threads"] = eval_threads;
      char* metrics = nullptr;
      const auto st = df_evaluate(model.get(), eval_data.c_str(), opts.dump().c_str(),
                                  eval_transcripts.empty() ? nullptr : eval_transcripts.c_str(),
                                  &metrics);
      if (st != DF_OK) return report(st);
      const std::string text = json::parse(take(metrics)).dump(2);
      std::cout << text << '\n';
      if (!eval_out.empty()) {
        std::ofstream out(eval_out);
        if (!(out << text << '\n')) throw std::runtime_error("cannot write " + eval_out);
      }
      return 0;
    }

    if (*base) {
      double dacc = 0;
      if (const auto st = df_baseline(base_train.c_str(), base_test.c_str(), &dacc)) return report(st);
      std::cout << json{{"dacc", dacc}}.dump() << '\n';
      return 0;
    }

    if (*grad) {
      grad_opts = {{"layers", g_layers}, {"hidden", g_hidden}, {"heads", g_heads}, {"seed", g_seed}};
      if (g_max_entries > 0) grad_opts["max_entries_per_tensor"] = g_max_entries;
      char* out = nullptr;
      if (const auto st = df_gradcheck(grad_opts.dump().c_str(), &out)) return report(st);
      const json r = json::parse(take(out));
      std::cout << r.dump(2) << '\n';
      if (r["max_rel_err"].get<double>() > g_tol) {
        std::cerr << "gradient check failed: max relative error " << r["max_rel_err"] << " > " << g_tol
                  << '\n';
        return 1;
      }
      return 0;
    }

    if (*serve) {
      if (serve_bind.empty()) {
        const char* env = std::getenv(kBindEnv);
        serve_bind = env && *env ? env : kDefaultBind;
      }
      const auto [host, port] = diaformer::service::parse_bind_address(serve_bind);
      ModelHandle model;
      if (const auto st = model.load(serve_ckpt)) return report(st);

      diaformer::service::ServiceOptions options;
      options.ttl = std::chrono::minutes(serve_ttl_min);
      options.inference_json = serve_flags.to_json().dump();
      // Reject bad thresholds before binding.
      df_dialogue* probe = nullptr;
      if (const auto st = df_dialogue_create(model.get(), "{}", options.inference_json.c_str(), &probe)) {
        return report(st);
      }
      df_dialogue_free(probe);

      diaformer::service::SessionService service(model.get(), options);
      httplib::Server server;
      service.mount(server);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      if (!server.bind_to_port(host, port)) {
        std::cerr << "error: cannot bind " << host << ':' << port << '\n';
        return 1;
      }
      std::cerr << "listening on " << host << ':' << port << '\n';
      server.listen_after_bind();
      return 0;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

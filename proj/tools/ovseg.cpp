// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// ovseg command-line driver. Exit codes: 0 success, 1 stage failure,
// 2 configuration error.

#include "ovseg/fixture.hpp"
#include "ovseg/pipeline.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

namespace {

using ovseg::ConfigError;
using ovseg::ParseError;
using Json = nlohmann::json;

/// Flags shared by every stage; only flags given on the command line reach
/// the resolved config.
struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::string> cache_dir;
  std::optional<double> alpha, tau, threshold, gate, logit_scale, background_threshold;
  std::optional<int> beta, min_support, jobs, max_images;
  std::optional<std::string> self_correction, aggregation, softmax_scope, vg_scope, background;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Run config (JSON)");
    app->add_option("--cache-dir", cache_dir, "Cache root (overrides VIP_CACHE_DIR)");
    app->add_option("--alpha", alpha, "Affinity sharpening exponent");
    app->add_option("--beta", beta, "Random-walk steps");
    app->add_option("--tau", tau, "Free-energy temperature");
    app->add_option("--threshold", threshold, "High-activation threshold");
    app->add_option("--gate", gate, "Text-similarity gate for aliases");
    app->add_option("--logit-scale", logit_scale, "Softmax logit scale");
    app->add_option("--self-correction", self_correction, "on|off");
    app->add_option("--aggregation", aggregation, "free_energy|max|mean");
    app->add_option("--softmax-scope", softmax_scope, "union|per_class");
    app->add_option("--vg-scope", vg_scope, "restricted|global");
    app->add_option("--min-support", min_support, "Minimum images supporting a candidate");
    app->add_option("--background", background, "queries|threshold");
    app->add_option("--background-threshold", background_threshold, "Foreground score below which pixels are background");
    app->add_option("--jobs", jobs, "Worker threads");
    app->add_option("--max-images", max_images, "Images used for scoring");
  }

  Json overrides() const {
    Json j = Json::object();
    if (cache_dir) j["cache_dir"] = *cache_dir;
    if (alpha) j["alpha"] = *alpha;
    if (beta) j["beta"] = *beta;
    if (tau) j["tau"] = *tau;
    if (threshold) j["threshold"] = *threshold;
    if (gate) j["gate"] = *gate;
    if (logit_scale) j["logit_scale"] = *logit_scale;
    if (self_correction) j["self_correction"] = *self_correction;
    if (aggregation) j["aggregation"] = *aggregation;
    if (softmax_scope) j["softmax_scope"] = *softmax_scope;
    if (vg_scope) j["vg_scope"] = *vg_scope;
    if (min_support) j["min_support"] = *min_support;
    if (background) j["background"] = *background;
    if (background_threshold) j["background_threshold"] = *background_threshold;
    if (jobs) j["jobs"] = *jobs;
    if (max_images) j["max_images"] = *max_images;
    return j;
  }

  ovseg::RunConfig resolve() const {
    std::optional<std::filesystem::path> file;
    if (config) file = *config;
    return ovseg::RunConfig::resolve(file, overrides());
  }
};

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

/// Either a vocabulary file or a raw alias file (ingested and gated here).
ovseg::Vocabulary load_candidate_vocabulary(const ovseg::PipelineContext& ctx, const std::filesystem::path& path,
                                            const std::optional<std::string>& templates) {
  const Json j = read_json(path);
  if (j.contains("stage")) return ovseg::Vocabulary::from_json(j);
  const auto tmpl = templates ? ovseg::load_templates(*templates) : ovseg::reference_templates();
  auto in = ovseg::ingest_candidates(path, ctx.dataset.classes, ctx.dataset.name, tmpl, *ctx.backend, ctx.config.gate);
  for (const auto& r : in.rejections) spdlog::warn("rejected: {}", r);
  for (const auto& g : in.gated_out) spdlog::info("gated out: {} -> {}", g.canonical_name, g.alias_surface);
  return in.vocabulary;
}

void report_failures(const std::string& stage, const std::vector<ovseg::StageFailure>& failures) {
  for (const auto& f : failures) std::cerr << stage << ": " << f.image_id << ": " << f.reason << "\n";
}

/// OpenAI-style chat endpoint: POST {"model", "messages"} and read
/// choices[0].message.content.
std::string ask_model(const std::string& endpoint, const std::string& model, const std::string& prompt) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos || endpoint.substr(0, scheme_end) != "http") {
    throw ConfigError("--endpoint must be an http:// URL");
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  const std::string host = endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
  httplib::Client client(host);
  client.set_read_timeout(120, 0);
  const Json body = {{"model", model}, {"messages", Json::array({{{"role", "user"}, {"content", prompt}}})}};
  const auto res = client.Post(path, body.dump(), "application/json");
  if (!res) throw std::runtime_error("request to " + endpoint + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error(endpoint + " returned HTTP " + std::to_string(res->status));
  try {
    return Json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("unexpected model reply: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free open-vocabulary segmentation with alias distillation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error");

  CommonFlags common;
  std::string dataset_path;

  // extract
  auto* extract = app.add_subcommand("extract", "Write per-image feature caches");
  common.add_to(extract);
  extract->add_option("--dataset", dataset_path, "Dataset config")->required();
  bool force = false;
  std::optional<std::string> report_path;
  extract->add_flag("--force", force, "Recompute existing caches");
  extract->add_option("--report", report_path, "Write the extraction report (JSON)");

  // vocab
  auto* vocab = app.add_subcommand("vocab", "Candidate vocabulary tools");
  vocab->require_subcommand(1);
  auto* ingest = vocab->add_subcommand("ingest", "Gate an alias file into a candidate vocabulary");
  common.add_to(ingest);
  std::string aliases_path, out_path;
  std::optional<std::string> templates_path;
  ingest->add_option("--dataset", dataset_path, "Dataset config")->required();
  ingest->add_option("--aliases", aliases_path, "Alias file")->required();
  ingest->add_option("--templates", templates_path, "Template file (default: the 80 reference templates)");
  ingest->add_option("--out", out_path, "Output vocabulary")->required();

  auto* generate = vocab->add_subcommand("generate", "Ask a language model for aliases (optional)");
  std::string endpoint, model = "default";
  generate->add_option("--dataset", dataset_path, "Dataset config")->required();
  generate->add_option("--endpoint", endpoint, "http:// chat-completions URL")->required();
  generate->add_option("--model", model, "Model name sent with the request");
  generate->add_option("--out", out_path, "Output alias file")->required();

  // distill
  auto* distill = app.add_subcommand("distill", "Score and filter candidate aliases");
  common.add_to(distill);
  std::string candidates_path, scores_path, vocab_out;
  std::optional<std::string> template_candidates;
  distill->add_option("--dataset", dataset_path, "Dataset config")->required();
  distill->add_option("--candidates", candidates_path, "Candidate vocabulary or alias file")->required();
  distill->add_option("--templates", templates_path, "Template file used when ingesting an alias file");
  distill->add_option("--template-candidates", template_candidates, "Candidate templates to score and filter");
  distill->add_option("--out", scores_path, "Score report (CSV)")->required();
  distill->add_option("vocab", vocab_out, "Filtered vocabulary output")->required();

  // segment
  auto* segment = app.add_subcommand("segment", "Segment every dataset image");
  common.add_to(segment);
  std::string vocab_path, out_dir;
  std::optional<int> window, stride, short_side;
  bool keep_logits = false, plain = false;
  segment->add_option("--dataset", dataset_path, "Dataset config")->required();
  segment->add_option("--vocab", vocab_path, "Vocabulary")->required();
  segment->add_option("--out", out_dir, "Mask output directory")->required();
  segment->add_option("--windows", window, "Sliding window size");
  segment->add_option("--stride", stride, "Sliding window stride");
  segment->add_option("--short-side", short_side, "Short side after resizing");
  segment->add_flag("--logits", keep_logits, "Also write {image_id}.logits");
  segment->add_flag("--plain", plain, "Canonical names only, no alias fusion");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compute mIoU of predicted masks");
  std::string pred_dir;
  evaluate->add_option("--dataset", dataset_path, "Dataset config")->required();
  evaluate->add_option("--pred", pred_dir, "Prediction directory")->required();
  evaluate->add_option("--out", out_path, "Report (JSON); per-class CSV is written alongside")->required();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "ingest, distill, segment and evaluate");
  common.add_to(pipeline);
  std::optional<std::string> pipeline_candidates, replay;
  pipeline->add_option("--dataset", dataset_path, "Dataset config");
  pipeline->add_option("--candidates", pipeline_candidates, "Alias file");
  pipeline->add_option("--templates", templates_path, "Template file");
  pipeline->add_option("--template-candidates", template_candidates, "Candidate templates to score and filter");
  pipeline->add_option("--replay", replay, "Re-run a manifest.json");
  pipeline->add_option("--out", out_dir, "Output directory")->required();

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "Feature-similarity diagnostics per class");
  common.add_to(diagnose);
  std::optional<std::string> diag_vocab;
  diagnose->add_option("--dataset", dataset_path, "Dataset config")->required();
  diagnose->add_option("--vocab", diag_vocab, "Vocabulary (default: class names with the reference templates)");
  diagnose->add_option("--out", out_path, "Output CSV")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Write the seeded synthetic fixture dataset");
  std::uint64_t seed = 1;
  int images = 20;
  synth->add_option("--seed", seed, "Fixture seed");
  synth->add_option("--images", images, "Image count");
  synth->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  std::string stage = "ovseg";
  try {
    if (*extract) {
      stage = "extract";
      const auto ctx = ovseg::PipelineContext::create(common.resolve(), dataset_path);
      const auto rep = ovseg::run_extract(ctx, force);
      if (report_path) write_file(*report_path, rep.to_json().dump(2) + "\n");
      std::cout << "extract: " << rep.written << " written, " << rep.reused << " reused, " << rep.failures.size()
                << " failed\n";
      report_failures(stage, rep.failures);
      return rep.failures.empty() ? 0 : 1;
    }
    if (*ingest) {
      stage = "vocab ingest";
      const auto ctx = ovseg::PipelineContext::create(common.resolve(), dataset_path);
      const auto tmpl = templates_path ? ovseg::load_templates(*templates_path) : ovseg::reference_templates();
      const auto in = ovseg::ingest_candidates(aliases_path, ctx.dataset.classes, ctx.dataset.name, tmpl,
                                               *ctx.backend, ctx.config.gate);
      for (const auto& r : in.rejections) std::cerr << "rejected: " << r << "\n";
      for (const auto& g : in.gated_out) std::cerr << "gated out: " << g.canonical_name << " -> " << g.alias_surface << "\n";
      in.vocabulary.save(out_path);
      std::cout << "vocab ingest: " << in.vocabulary.num_queries() << " queries\n";
      return 0;
    }
    if (*generate) {
      stage = "vocab generate";
      const auto ds = ovseg::DatasetSpec::load(dataset_path);
      Json classes = Json::array();
      for (const auto& name : ds.classes) {
        const auto phrases = ovseg::parse_alias_reply(ask_model(endpoint, model, ovseg::alias_request(name)));
        classes.push_back({{"name", name}, {"aliases", phrases}});
      }
      write_file(out_path, Json{{"version", 1}, {"dataset", ds.name}, {"classes", classes}}.dump(2) + "\n");
      return 0;
    }
    if (*distill) {
      stage = "distill";
      const auto ctx = ovseg::PipelineContext::create(common.resolve(), dataset_path);
      const auto cands = load_candidate_vocabulary(ctx, candidates_path, templates_path);
      auto res = ovseg::run_distill(ctx, cands);
      if (template_candidates) {
        const auto scored = ovseg::score_templates(ctx, res.filtered, ovseg::load_templates(*template_candidates));
        const auto reference = ovseg::score_templates(ctx, res.filtered, ovseg::reference_templates());
        res.filtered.templates = ovseg::filter_templates(scored, reference);
      }
      write_file(scores_path, ovseg::score_report_csv(res.records, ctx.dataset.classes));
      res.filtered.save(vocab_out);
      report_failures(stage, res.skipped);
      std::cout << "distill: " << res.filtered.num_queries() << " of " << cands.num_queries() << " queries retained\n";
      return 0;
    }
    if (*segment) {
      stage = "segment";
      auto ctx = ovseg::PipelineContext::create(common.resolve(), dataset_path);
      if (window) ctx.dataset.window = *window;
      if (stride) ctx.dataset.stride = *stride;
      if (short_side) ctx.dataset.short_side = *short_side;
      ctx.dataset.validate();
      const auto rep = ovseg::run_segment(ctx, ovseg::Vocabulary::load(vocab_path), out_dir, keep_logits, plain);
      report_failures(stage, rep.failures);
      std::cout << "segment: " << rep.results.size() << " images, " << rep.mean_ms << " ms/image\n";
      return rep.failures.empty() ? 0 : 1;
    }
    if (*evaluate) {
      stage = "evaluate";
      const auto ds = ovseg::DatasetSpec::load(dataset_path);
      const auto rep = ovseg::run_evaluate(ds, pred_dir);
      write_file(out_path, rep.to_json().dump(2) + "\n");
      write_file(std::filesystem::path(out_path).replace_extension(".csv"), rep.per_class_csv());
      std::cout << "mIoU " << rep.miou << "\n";
      return 0;
    }
    if (*pipeline) {
      stage = "pipeline";
      ovseg::RunConfig cfg;
      std::optional<std::filesystem::path> cands, tmpl, tmpl_cands;
      if (replay) {
        const Json m = read_json(*replay);
        cfg.apply(m.at("config"));
        const Json& inputs = m.at("inputs");
        auto opt = [&](const char* k) -> std::optional<std::filesystem::path> {
          if (inputs.at(k).is_null()) return std::nullopt;
          return inputs.at(k).get<std::string>();
        };
        cands = opt("candidates");
        tmpl = opt("templates");
        tmpl_cands = opt("template_candidates");
        dataset_path = m.at("dataset_path").get<std::string>();
      } else {
        if (dataset_path.empty()) throw ConfigError("--dataset is required without --replay");
        cfg = common.resolve();
        if (pipeline_candidates) cands = std::filesystem::absolute(*pipeline_candidates);
        if (templates_path) tmpl = std::filesystem::absolute(*templates_path);
        if (template_candidates) tmpl_cands = std::filesystem::absolute(*template_candidates);
        cfg.base_dir = std::filesystem::absolute(cfg.base_dir);
        cfg.cache_dir = std::filesystem::absolute(cfg.cache_dir);
        dataset_path = std::filesystem::absolute(dataset_path).string();
      }
      const auto ctx = ovseg::PipelineContext::create(cfg, dataset_path);
      const auto out = ovseg::run_pipeline(ctx, cands, tmpl, tmpl_cands, out_dir);
      std::cout << "mIoU " << out.report.miou << " pixel accuracy " << out.report.pixel_accuracy << "\n";
      return 0;
    }
    if (*diagnose) {
      stage = "diagnose";
      const auto ctx = ovseg::PipelineContext::create(common.resolve(), dataset_path);
      const auto v = diag_vocab ? ovseg::Vocabulary::load(*diag_vocab)
                                : ovseg::Vocabulary::from_candidates(ctx.dataset.name, ctx.dataset.classes, {},
                                                                     ovseg::reference_templates());
      write_file(out_path, ovseg::run_diagnose(ctx, v));
      return 0;
    }
    if (*synth) {
      stage = "synth";
      ovseg::FixtureOptions opt;
      opt.seed = seed;
      opt.images = images;
      const auto path = ovseg::write_fixture(ovseg::make_fixture(opt), out_dir);
      std::cout << "wrote " << path.string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << stage << ": configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << stage << ": configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << stage << ": failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

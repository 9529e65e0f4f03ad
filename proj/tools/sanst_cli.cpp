// SPDX-License-Identifier: Apache-2.0
// sanst command-line front end.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sanst/evaluation.hpp"
#include "sanst/geocode.hpp"
#include "sanst/ingest.hpp"
#include "sanst/run_config.hpp"
#include "sanst/trainer.hpp"

namespace {

using namespace sanst;

struct Failure {
  std::string kind;
  std::string message;
};

[[noreturn]] void fail(std::string kind, std::string message) { throw Failure{std::move(kind), std::move(message)}; }

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& l : lines) out << l << '\n';
  if (!out) fail("io", "cannot write " + path);
}

data::Day parse_date(const std::string& text) {
  const auto full = text.size() == 10 ? text + "T00:00:00" : text;
  return data::day_index(data::parse_iso8601(full));
}

struct PrepareArgs {
  std::string input, output, columns = "0,1,2,3,4";
  std::size_t min_len = 5;
};

int run_prepare(const PrepareArgs& a) {
  const auto checkins = data::parse_checkins(a.input, data::ColumnMap::parse(a.columns));
  const auto corpus = data::prepare_corpus(checkins, a.min_len);
  data::write_bundle(corpus, a.output);
  for (const auto& w : corpus.warnings) std::cerr << "warning: " << one_line(w) << '\n';
  std::cout << data::corpus_stats(corpus).to_string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::string bundle, out, checkpoint, log;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> policy;
  bool no_spatial = false, no_temporal = false, no_abs_pos = false, resume = false;
};

int run_train(const TrainArgs& a) {
  const auto file = a.config_file.empty() ? KeyValues{} : KeyValues::load(a.config_file);
  KeyValues cli;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) fail("config", "--set expects key=value, got '" + s + "'");
    cli.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!a.bundle.empty()) cli.set("data.bundle", a.bundle);
  if (!a.out.empty()) cli.set("output.model", a.out);
  if (!a.checkpoint.empty()) cli.set("train.checkpoint", a.checkpoint);
  if (!a.log.empty()) cli.set("output.log", a.log);
  if (a.seed) cli.set("train.seed", std::to_string(*a.seed));
  if (a.epochs) cli.set("train.epochs", std::to_string(*a.epochs));
  if (a.policy) cli.set("train.policy", *a.policy);
  if (a.no_spatial) cli.set("model.use_spatial", "false");
  if (a.no_temporal) cli.set("model.use_temporal", "false");
  if (a.no_abs_pos) cli.set("model.use_abs_pos", "false");
  const auto rc = RunConfig::resolve(file, cli);
  rc.validate_paths();
  if (rc.model_path.empty()) fail("config", "no output model path given (--out or output.model)");

  const auto corpus = data::read_bundle(rc.bundle);
  const auto split = data::filter_and_split(corpus.sequences);
  const bool resuming = a.resume && !rc.train.checkpoint_path.empty() &&
                        std::filesystem::exists(rc.train.checkpoint_path);
  auto trainer = resuming ? train::Trainer::resume(rc.train.checkpoint_path, corpus.catalog, split, rc.train)
                          : train::Trainer(rc.model, rc.train, corpus.catalog, split);
  const auto result = trainer.fit();
  for (const auto& line : result.log) std::cout << line << '\n';
  if (!rc.log_path.empty()) write_lines(rc.log_path, result.log);

  ad::Checkpoint ck;
  auto portable = rc.train;
  portable.checkpoint_path.clear();
  ck.metadata = portable.to_kv().to_string();
  result.best.save(ck);
  ck.save(rc.model_path);
  if (result.best_report) {
    std::cout << "best_epoch=" << result.best_epoch << ' ' << result.best_report->summary() << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, bundle, json;
  std::size_t k = 10;
  std::string policy = "exclude-history";
};

int run_eval(const EvalArgs& a) {
  const auto model = model::Model::load(ad::Checkpoint::load(a.checkpoint));
  const auto corpus = data::read_bundle(a.bundle);
  if (model.num_pois() != corpus.catalog.num_pois()) {
    fail("data", "checkpoint covers " + std::to_string(model.num_pois()) + " POIs but the bundle has " +
                     std::to_string(corpus.catalog.num_pois()));
  }
  const auto split = data::filter_and_split(corpus.sequences);
  const auto report = eval::evaluate(model, corpus.catalog, split, a.k, model::parse_policy(a.policy));
  std::cout << report.summary() << '\n';
  if (!a.json.empty()) write_lines(a.json, {report.to_json()});
  return 0;
}

struct RecommendArgs {
  std::string checkpoint, bundle, user, date;
  std::size_t k = 10;
  std::string policy = "exclude-history";
};

int run_recommend(const RecommendArgs& a) {
  const auto model = model::Model::load(ad::Checkpoint::load(a.checkpoint));
  const auto corpus = data::read_bundle(a.bundle);
  const auto uid = corpus.catalog.find_user(a.user);
  if (uid < 0) fail("data", "unknown user '" + a.user + "'");
  const auto& history = corpus.sequences.at(static_cast<std::size_t>(uid));
  const auto recs =
      model::recommend(model, corpus.catalog, history, parse_date(a.date), a.k, model::parse_policy(a.policy));
  char buf[64];
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", recs[i].score);
    std::cout << i + 1 << ' ' << corpus.catalog.poi_name(recs[i].poi) << ' ' << buf << '\n';
  }
  return 0;
}

int run_geohash(double lat, double lon, std::size_t chars) {
  const auto code = geo::cell_of({lat, lon}).str();
  std::cout << code.substr(0, chars) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SANST next-POI recommender"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Parse check-ins into a dataset bundle");
  prepare->add_option("input", prep.input, "Check-in file (tab-separated)")->required()->check(CLI::ExistingFile);
  prepare->add_option("output", prep.output, "Bundle to write")->required();
  prepare->add_option("--columns", prep.columns, "Column indices of user,time,lat,lon,poi");
  prepare->add_option("--min-len", prep.min_len, "Minimum check-ins per user");

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train a model");
  trainc->add_option("--config", tr.config_file, "key=value config file")->check(CLI::ExistingFile);
  trainc->add_option("--set", tr.sets, "Override a config key (key=value), repeatable");
  trainc->add_option("--bundle", tr.bundle, "Dataset bundle (data.bundle)");
  trainc->add_option("--out", tr.out, "Best model checkpoint (output.model)");
  trainc->add_option("--checkpoint", tr.checkpoint, "Resumable training checkpoint (train.checkpoint)");
  trainc->add_option("--log", tr.log, "Training log file (output.log)");
  trainc->add_option("--seed", tr.seed, "Random seed (train.seed)");
  trainc->add_option("--epochs", tr.epochs, "Epochs (train.epochs)");
  trainc->add_option("--policy", tr.policy, "Evaluation candidates: exclude-history or full");
  trainc->add_flag("--no-spatial", tr.no_spatial, "Drop the spatial embedding");
  trainc->add_flag("--no-temporal", tr.no_temporal, "Drop relative temporal attention");
  trainc->add_flag("--no-abs-pos", tr.no_abs_pos, "Drop absolute positional embeddings");
  trainc->add_flag("--resume", tr.resume, "Continue from --checkpoint if it exists");

  EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on held-out check-ins");
  evalc->add_option("checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  evalc->add_option("bundle", ev.bundle)->required()->check(CLI::ExistingFile);
  evalc->add_option("-k,--k", ev.k, "Cutoff K");
  evalc->add_option("--policy", ev.policy, "exclude-history or full");
  evalc->add_option("--json", ev.json, "Write a JSON summary here");

  RecommendArgs rec;
  auto* recc = app.add_subcommand("recommend", "Top-K next POIs for one user");
  recc->add_option("checkpoint", rec.checkpoint)->required()->check(CLI::ExistingFile);
  recc->add_option("bundle", rec.bundle)->required()->check(CLI::ExistingFile);
  recc->add_option("--user", rec.user, "User id as in the input file")->required();
  recc->add_option("--date", rec.date, "Query date, YYYY-MM-DD")->required();
  recc->add_option("-k,--k", rec.k, "Number of recommendations");
  recc->add_option("--policy", rec.policy, "exclude-history or full");

  double lat = 0.0, lon = 0.0;
  std::size_t chars = static_cast<std::size_t>(geo::kCodeLength);
  auto* geoc = app.add_subcommand("geohash", "Print the grid-cell code of a point");
  geoc->add_option("lat", lat)->required();
  geoc->add_option("lon", lon)->required();
  geoc->add_option("--chars", chars, "Code length")->check(CLI::Range(1, geo::kCodeLength));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error=usage message=" << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*prepare) return run_prepare(prep);
    if (*trainc) return run_train(tr);
    if (*evalc) return run_eval(ev);
    if (*recc) return run_recommend(rec);
    if (*geoc) return run_geohash(lat, lon, chars);
  } catch (const Failure& f) {
    std::cerr << "error=" << f.kind << " message=" << one_line(f.message) << '\n';
    return 1;
  } catch (const data::ParseError& e) {
    std::cerr << "error=parse message=" << one_line(e.what()) << '\n';
    return 1;
  } catch (const geo::RangeError& e) {
    std::cerr << "error=range message=" << one_line(e.what()) << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error=config message=" << one_line(e.what()) << '\n';
    return 1;
  } catch (const io::FormatError& e) {
    std::cerr << "error=format message=" << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error=runtime message=" << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

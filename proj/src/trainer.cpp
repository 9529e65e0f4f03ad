// SPDX-License-Identifier: Apache-2.0
#include "sanst/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sanst::train {

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string log_line(std::size_t epoch, double loss, const eval::EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "epoch=" << epoch << " loss=" << loss << " hit" << r.k << "=" << r.hit << " ndcg" << r.k
     << "=" << r.ndcg;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (eval_k == 0) throw ConfigError("eval_k must be at least 1");
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("train.lr", format_double(lr));
  kv.set("train.l2", format_double(l2));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.eval_every", std::to_string(eval_every));
  kv.set("train.eval_k", std::to_string(eval_k));
  kv.set("train.policy", model::to_string(policy));
  if (!checkpoint_path.empty()) kv.set("train.checkpoint", checkpoint_path);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, TrainConfig c) {
  c.lr = kv.get_double("train.lr", c.lr);
  c.l2 = kv.get_double("train.l2", c.l2);
  c.batch_size = kv.get_size("train.batch_size", c.batch_size);
  c.epochs = kv.get_size("train.epochs", c.epochs);
  c.seed = static_cast<std::uint64_t>(kv.get_size("train.seed", static_cast<std::size_t>(c.seed)));
  c.eval_every = kv.get_size("train.eval_every", c.eval_every);
  c.eval_k = kv.get_size("train.eval_k", c.eval_k);
  c.policy = model::parse_policy(kv.get_string("train.policy", model::to_string(c.policy)));
  c.checkpoint_path = kv.get_string("train.checkpoint", c.checkpoint_path);
  c.validate();
  return c;
}

History::History(const data::UserSequence& seq, std::size_t num_pois) : seen_(num_pois + 1, false) {
  for (const auto id : seq.items) {
    auto slot = seen_[static_cast<std::size_t>(id)];
    if (!slot) ++distinct_;
    slot = true;
  }
}

PoiId sample_negative(const History& history, std::size_t num_pois, std::mt19937_64& rng) {
  const auto free = num_pois - history.distinct();
  if (free == 0) throw TrainingError("no negative POI exists: the user visited every POI");
  if (free * 4 >= num_pois) {
    std::uniform_int_distribution<PoiId> pick(1, static_cast<PoiId>(num_pois));
    while (true) {
      const auto id = pick(rng);
      if (!history.contains(id)) return id;
    }
  }
  // Dense history: index into the complement directly.
  std::uniform_int_distribution<std::size_t> pick(0, free - 1);
  auto nth = pick(rng);
  for (PoiId id = 1;; ++id) {
    if (history.contains(id)) continue;
    if (nth-- == 0) return id;
  }
}

ad::Tensor bce_loss(ad::Tape& tape, const ad::Tensor& pos_scores, const ad::Tensor& neg_scores,
                    std::span<const double> mask, const std::vector<ad::Tensor>& tables, double l2) {
  const auto pos = tape.weighted_sum(tape.log_sigmoid(pos_scores), mask);
  const auto neg = tape.weighted_sum(tape.log_sigmoid(tape.scale(neg_scores, -1.0)), mask);
  auto loss = tape.scale(tape.add(pos, neg), -1.0);
  if (l2 > 0.0) {
    for (const auto& t : tables) loss = tape.add(loss, tape.scale(tape.sum_squares(t), l2));
  }
  return loss;
}

Trainer::Trainer(model::ModelConfig mcfg, TrainConfig tcfg, const data::Catalog& catalog,
                 const data::SplitDataset& split)
    : tcfg_((tcfg.validate(), tcfg)),
      catalog_(catalog),
      split_(split),
      rng_(tcfg.seed),
      model_(mcfg, catalog.num_pois(), rng_),
      adam_(model_.params().all(), ad::AdamConfig{tcfg.lr}) {
  histories_.reserve(split.num_users());
  for (const auto& s : split.train) histories_.emplace_back(s, catalog.num_pois());
}

double Trainer::train_batch(std::span<const std::size_t> users) {
  const auto& cfg = model_.config();
  ad::Tape tape;
  std::vector<data::Window> windows;
  std::vector<std::vector<PoiId>> negatives;
  std::vector<PoiId> needed;
  for (const auto u : users) {
    auto w = data::window(split_.train[u], cfg.max_len);
    std::vector<PoiId> neg(w.input.size(), data::kPadding);
    for (std::size_t i = 0; i < w.input.size(); ++i) {
      if (w.valid[i]) neg[i] = sample_negative(histories_[u], catalog_.num_pois(), rng_);
    }
    needed.insert(needed.end(), w.input.begin(), w.input.end());
    needed.insert(needed.end(), w.target.begin(), w.target.end());
    needed.insert(needed.end(), neg.begin(), neg.end());
    windows.push_back(std::move(w));
    negatives.push_back(std::move(neg));
  }
  const model::ItemEncoder enc(tape, cfg, model_.params(), catalog_, needed);

  ad::Tensor pos_all, neg_all;
  for (std::size_t b = 0; b < users.size(); ++b) {
    const auto& w = windows[b];
    const auto query_day = w.input_days.back();
    const auto out = model_.forward(tape, enc, w, query_day, true, &rng_);
    if (out.hidden.rows() == 0) continue;
    const std::span<const PoiId> targets(w.target.data() + out.offset, w.target.size() - out.offset);
    const std::span<const PoiId> negs(negatives[b].data() + out.offset, negatives[b].size() - out.offset);
    const auto pos_items = enc.score_rows(targets);
    const auto neg_items = enc.score_rows(negs);
    const auto h = pos_items.cols() == out.hidden.cols() ? out.hidden : tape.slice_cols(out.hidden, 0, pos_items.cols());
    const auto pos = tape.row_dot(h, pos_items);
    const auto neg = tape.row_dot(h, neg_items);
    pos_all = pos_all.defined() ? tape.concat_rows(pos_all, pos) : pos;
    neg_all = neg_all.defined() ? tape.concat_rows(neg_all, neg) : neg;
  }
  if (!pos_all.defined()) return 0.0;
  const std::vector<double> mask(pos_all.size(), 1.0);
  const auto loss = bce_loss(tape, pos_all, neg_all, mask, model_.params().embedding_tables(), tcfg_.l2);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite loss " + format_double(value) + " at epoch " + std::to_string(epoch_ + 1) +
                        " (batch of " + std::to_string(users.size()) + " users, " +
                        std::to_string(pos_all.size()) + " positions)");
  }
  tape.backward(loss);
  for (const auto& [name, t] : model_.params().named()) {
    if (!t.has_grad()) continue;
    for (const double g : t.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + name + " at epoch " + std::to_string(epoch_ + 1));
    }
  }
  adam_.step();
  model_.params().zero_padding_row();
  return value;
}

double Trainer::train_epoch() {
  std::vector<std::size_t> order(split_.num_users());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  double total = 0.0;
  std::size_t positions = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += tcfg_.batch_size) {
    const auto end = std::min(order.size(), begin + tcfg_.batch_size);
    const std::span<const std::size_t> batch(order.data() + begin, end - begin);
    total += train_batch(batch);
    for (const auto u : batch) {
      positions += std::min(model_.config().max_len, split_.train[u].size() == 0 ? 0 : split_.train[u].size() - 1);
    }
  }
  ++epoch_;
  const double mean = positions ? total / static_cast<double>(positions) : 0.0;
  losses_.push_back(mean);
  return mean;
}

eval::EvalReport Trainer::evaluate() const {
  return eval::evaluate(model_, catalog_, split_, tcfg_.eval_k, tcfg_.policy);
}

FitResult Trainer::fit() {
  while (epoch_ < tcfg_.epochs) {
    const double loss = train_epoch();
    const bool due = (tcfg_.eval_every > 0 && epoch_ % tcfg_.eval_every == 0) || epoch_ == tcfg_.epochs;
    if (!due) continue;
    auto report = evaluate();
    log_.push_back(log_line(epoch_, loss, report));
    if (report.ndcg > best_ndcg_) {
      best_ndcg_ = report.ndcg;
      best_epoch_ = epoch_;
      best_params_ = model_.params().clone();
      best_report_ = std::move(report);
    }
    if (!tcfg_.checkpoint_path.empty()) save_checkpoint(tcfg_.checkpoint_path);
  }
  const auto& params = best_params_ ? *best_params_ : model_.params();
  return {model::Model(model_.config(), params.clone()), log_, best_report_, best_epoch_};
}

void Trainer::save_checkpoint(const std::string& path) const {
  ad::Checkpoint ck;
  auto portable = tcfg_;
  portable.checkpoint_path.clear();
  auto kv = portable.to_kv();
  kv.merge(model_.config().to_kv());
  std::ostringstream rng_state;
  rng_state << rng_;
  kv.set("state.epoch", std::to_string(epoch_));
  kv.set("state.adam_steps", std::to_string(adam_.steps()));
  kv.set("state.rng", rng_state.str());
  kv.set("state.best_ndcg", format_double(best_ndcg_));
  kv.set("state.best_epoch", std::to_string(best_epoch_));
  for (std::size_t i = 0; i < log_.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "log.%06zu", i);
    kv.set(key, log_[i]);
  }
  ck.metadata = kv.to_string();
  model_.save(ck);
  const auto named = model_.params().named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.add("adam.m." + named[i].first, adam_.first_moments()[i]);
    ck.add("adam.v." + named[i].first, adam_.second_moments()[i]);
  }
  if (best_params_) {
    for (const auto& [name, t] : best_params_->named()) ck.add("best." + name, t);
    std::vector<double> ranks(best_report_->ranks.begin(), best_report_->ranks.end());
    ck.add("state.best_ranks", ad::Tensor::from({ranks.size()}, ranks));
  }
  ck.add("state.losses", ad::Tensor::from({losses_.size()}, losses_));
  ck.save(path);
}

Trainer Trainer::resume(const std::string& path, const data::Catalog& catalog, const data::SplitDataset& split,
                        std::optional<TrainConfig> override_cfg) {
  const auto ck = ad::Checkpoint::load(path);
  const auto kv = KeyValues::parse(ck.metadata, path);
  auto tcfg = override_cfg ? *override_cfg : TrainConfig::from_kv(kv);
  if (tcfg.checkpoint_path.empty()) tcfg.checkpoint_path = path;
  const auto loaded = model::Model::load(ck);
  if (loaded.num_pois() != catalog.num_pois()) {
    throw io::FormatError("checkpoint was trained on " + std::to_string(loaded.num_pois()) + " POIs, dataset has " +
                          std::to_string(catalog.num_pois()));
  }
  Trainer t(loaded.config(), tcfg, catalog, split);
  for (auto& [name, tensor] : t.model_.params().named()) ck.load_into(name, tensor);
  const auto named = t.model_.params().named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.load_into("adam.m." + named[i].first, t.adam_.first_moments()[i]);
    ck.load_into("adam.v." + named[i].first, t.adam_.second_moments()[i]);
  }
  t.adam_.set_steps(kv.get_int("state.adam_steps", 0));
  std::istringstream rng_state(kv.get_string("state.rng", ""));
  rng_state >> t.rng_;
  if (!rng_state) throw io::FormatError("checkpoint has no valid generator state");
  t.epoch_ = kv.get_size("state.epoch", 0);
  t.best_ndcg_ = kv.get_double("state.best_ndcg", -1.0);
  t.best_epoch_ = kv.get_size("state.best_epoch", 0);
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("log.", 0) == 0) t.log_.push_back(value);
  }
  const auto& losses = ck.get("state.losses").values;
  t.losses_.assign(losses.begin(), losses.end());
  if (ck.contains("best.poi_id_table")) {
    t.best_params_ = loaded.params().clone();
    for (auto& [name, tensor] : t.best_params_->named()) ck.load_into("best." + name, tensor);
    const auto& r = ck.get("state.best_ranks").values;
    t.best_report_ = eval::aggregate(std::vector<std::size_t>(r.begin(), r.end()), tcfg.eval_k, tcfg.policy);
  }
  return t;
}

}  // namespace sanst::train

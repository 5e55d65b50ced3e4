// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>

#include "laminar/error.hpp"
#include "laminar/partition.hpp"

namespace laminar {

Strategy parse_strategy(const std::string& name) {
  if (name == "sequential") return Strategy::Sequential;
  if (name == "model") return Strategy::Model;
  if (name == "data") return Strategy::Data;
  if (name == "hybrid") return Strategy::Hybrid;
  throw ConfigError(msg("unknown strategy '", name,
                        "' (expected sequential, model, data, or hybrid)"));
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Sequential: return "sequential";
    case Strategy::Model: return "model";
    case Strategy::Data: return "data";
    case Strategy::Hybrid: return "hybrid";
  }
  return "unknown";
}

double lr_at(const LrSchedule& schedule, int epoch) {
  if (schedule.empty()) throw ConfigError("empty learning-rate schedule");
  double lr = schedule.front().second;
  for (const auto& [e, l] : schedule) {
    if (e <= epoch) lr = l;
    else break;
  }
  return lr;
}

LrSchedule parse_lr_schedule(const std::string& text) {
  LrSchedule out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError(msg("lr schedule entry '", item, "' is not epoch:rate"));
    }
    try {
      std::size_t used = 0;
      const int epoch = std::stoi(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument(item);
      const std::string rate_text = item.substr(colon + 1);
      const double rate = std::stod(rate_text, &used);
      if (used != rate_text.size()) throw std::invalid_argument(item);
      out.emplace_back(epoch, rate);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(msg("lr schedule entry '", item, "' is not epoch:rate"));
    }
  }
  if (out.empty()) throw ConfigError(msg("empty learning-rate schedule '", text, "'"));
  return out;
}

void TrainConfig::validate() const {
  if (num_partitions < 1) throw ConfigError(msg("num_partitions must be >= 1, got ", num_partitions));
  if (num_replicas < 1) throw ConfigError(msg("num_replicas must be >= 1, got ", num_replicas));
  if (batch_size < 1) throw ConfigError(msg("batch_size must be >= 1, got ", batch_size));
  if (pipeline_stages < 1 || pipeline_stages > batch_size) {
    throw ConfigError(msg("pipeline_stages must be in 1..batch_size, got ", pipeline_stages,
                          " with batch_size ", batch_size));
  }
  if (batch_size % pipeline_stages != 0) {
    throw ConfigError(msg("batch_size ", batch_size, " is not divisible by pipeline_stages ",
                          pipeline_stages));
  }
  if (epochs < 1) throw ConfigError(msg("epochs must be >= 1, got ", epochs));
  if (max_steps < 0) throw ConfigError(msg("max_steps must be >= 0, got ", max_steps));
  if (buffer_capacity < 1) throw ConfigError(msg("buffer_capacity must be >= 1, got ", buffer_capacity));
  if (comm_timeout_sec <= 0) throw ConfigError("comm_timeout_sec must be positive");
  if (lr_schedule.empty()) throw ConfigError("empty learning-rate schedule");
  if (lr_schedule.front().first != 0) {
    throw ConfigError("learning-rate schedule must start at epoch 0");
  }
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    const auto& [e, l] = lr_schedule[i];
    if (!(l > 0.0) || !std::isfinite(l)) {
      throw ConfigError(msg("learning rate for epoch ", e, " must be positive, got ", l));
    }
    if (i > 0 && e <= lr_schedule[i - 1].first) {
      throw ConfigError("learning-rate schedule epochs must be strictly ascending");
    }
  }
  switch (strategy) {
    case Strategy::Sequential:
      if (num_partitions != 1 || num_replicas != 1) {
        throw ConfigError(msg("sequential strategy wants 1 partition and 1 replica, got ",
                              num_partitions, " and ", num_replicas));
      }
      break;
    case Strategy::Model:
      if (num_replicas != 1) {
        throw ConfigError(msg("model strategy wants 1 replica, got ", num_replicas));
      }
      break;
    case Strategy::Data:
      if (num_partitions != 1) {
        throw ConfigError(msg("data strategy wants 1 partition, got ", num_partitions));
      }
      break;
    case Strategy::Hybrid:
      break;
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::int64_t count_correct(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  std::int64_t correct = 0;
  for (std::int64_t row = 0; row < logits.dim(0); ++row) {
    std::int64_t best = 0;
    double best_v = logits.at(row, 0);
    for (std::int64_t c = 1; c < logits.dim(1); ++c) {
      if (logits.at(row, c) > best_v) {
        best_v = logits.at(row, c);
        best = c;
      }
    }
    if (best == labels[static_cast<std::size_t>(row)]) ++correct;
  }
  return correct;
}

void check_divergence(double loss, int step) {
  if (!std::isfinite(loss)) throw Error(msg("loss diverged at step ", step, " (", loss, ")"));
}

}  // namespace

double evaluate_seq(const ModelGraph& model, const Dataset& data, std::int64_t batch) {
  if (data.n() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  if (batch < 1) throw ConfigError(msg("evaluation batch must be >= 1, got ", batch));
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < data.n(); start += batch) {
    const std::int64_t rows = std::min(batch, data.n() - start);
    const auto fwd =
        forward_seq(model, data.feature_rows(start, rows), data.label_rows(start, rows));
    correct += count_correct(fwd.activations[static_cast<std::size_t>(model.output_id)],
                             data.label_rows(start, rows));
  }
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

FitResult train_sequential(const ModelGraph& model0, const Dataset& train, const Dataset* test,
                           const TrainConfig& cfg) {
  const std::int64_t ebs = cfg.effective_batch();
  const std::int64_t spe = train.n() / ebs;
  if (spe < 1) {
    throw ConfigError(msg("effective batch ", ebs, " exceeds training set of ", train.n(),
                          " rows"));
  }
  FitResult res;
  res.model = model0;
  int step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const double lr = lr_at(cfg.lr_schedule, epoch);
    for (std::int64_t j = 0; j < spe && !done; ++j) {
      const auto t0 = Clock::now();
      const std::int64_t base = j * ebs;
      const auto fwd = forward_seq(res.model, train.feature_rows(base, ebs),
                                   train.label_rows(base, ebs));
      const auto grads = backward_seq(res.model, fwd);
      sgd_apply(res.model, grads, lr);
      ++step;
      check_divergence(fwd.loss, step);
      const double wall_ms = ms_since(t0);
      res.metrics.push_back({step, epoch, fwd.loss,
                             static_cast<double>(ebs) / (wall_ms / 1000.0), wall_ms});
      if (cfg.max_steps > 0 && step >= cfg.max_steps) done = true;
    }
  }
  if (!res.metrics.empty()) res.final_loss = res.metrics.back().loss;
  if (cfg.evaluate && test != nullptr && test->n() > 0) {
    res.test_accuracy = evaluate_seq(res.model, *test, ebs);
  }
  return res;
}

namespace {

/// One rank's outgoing message discipline for one destination rank.
///
/// Within a step every channel has a fixed slot order (the dependency-list
/// order all ranks agree on); messages produced out of that order park in
/// `pending` until their turn, then move to `queue`, which is flushed with
/// non-blocking sends. The queue survives step boundaries, so a slow peer
/// never stalls the producer and the wire order always equals the agreed
/// order — that is what makes capacity-1 channels deadlock-free.
struct OutChannel {
  int peer = -1;
  bool forward = false;  // carries activations (else partial errors + control)
  std::vector<CrossEdge> edges;
  std::vector<std::uint64_t> training_layout;  // slot tags of one training step

  std::vector<std::uint64_t> slot_tags;  // current step's layout
  std::map<int, Message> pending;
  int next_slot = 0;
  std::deque<Message> queue;
};

struct SendRef {
  OutChannel* channel = nullptr;
  int idx = 0;  // position within the channel's per-stage edge order
};

class RankWorker {
 public:
  RankWorker(Endpoint& ep, const ModelGraph& model0, const Dataset& train, const Dataset* test,
             const TrainConfig& cfg, const FitHooks* hooks)
      : ep_(ep),
        train_(train),
        test_(test),
        cfg_(cfg),
        hooks_(hooks),
        model_(model0),
        plan_(make_partition_plan(model0, cfg.num_partitions, cfg.num_replicas)) {
    if (ep_.world_size() != plan_.world_size()) {
      throw ConfigError(msg("endpoint world size ", ep_.world_size(), " does not match ",
                            plan_.num_partitions, " partitions x ", plan_.num_replicas,
                            " replicas"));
    }
    rank_ = ep_.rank();
    p_ = plan_.partition_of_rank(rank_);
    r_ = plan_.replica_of_rank(rank_);
    local_layers_ = plan_.layers_of(p_);
    output_id_ = model_.output_id;
    loss_rank_ = (p_ == plan_.last_partition());
    loss_owner_ = loss_rank_ && r_ == 0;
    ep_.set_timeout(cfg_.comm_timeout_sec);
    flush_cb_ = [this] { flush_all(); };

    const auto cp = build_channel_plan(model_, plan_, p_);
    const int S = cfg_.pipeline_stages;
    auto add_channel = [&](int peer_part, const std::vector<CrossEdge>& edges, bool forward) {
      OutChannel& ch = out_[plan_.rank_of(r_, peer_part)];
      ch.peer = plan_.rank_of(r_, peer_part);
      ch.forward = forward;
      ch.edges = edges;
      for (int s = 0; s < S; ++s) {
        for (const auto& e : edges) ch.training_layout.push_back(tags::edge(e.src, e.dst, s));
      }
    };
    for (const auto& [q, edges] : cp.fwd_out) add_channel(q, edges, true);
    for (const auto& [q, edges] : cp.bwd_out) add_channel(q, edges, false);
    // Control traffic (loss reports, parameter gather, eval counts) flows to
    // rank 0 on the same ordered channel as this rank's partial errors.
    if (r_ == 0 && p_ != 0 && out_.find(0) == out_.end()) {
      OutChannel& ch = out_[0];
      ch.peer = 0;
      ch.forward = false;
    }
    for (auto& [peer, ch] : out_) {
      for (std::size_t i = 0; i < ch.edges.size(); ++i) {
        const auto& e = ch.edges[i];
        SendRef ref{&ch, static_cast<int>(i)};
        if (ch.forward) {
          fwd_sends_[e.src].push_back(ref);
        } else {
          bwd_sends_[{e.src, e.dst}] = ref;
        }
      }
    }

    part_comm_.emplace(ep_, replica_groups(plan_)[static_cast<std::size_t>(p_)]);
    world_comm_.emplace(ep_, world_group(plan_));
  }

  FitResult run() {
    const std::int64_t ebs = cfg_.effective_batch();
    const int S = cfg_.pipeline_stages;
    const std::int64_t mb = cfg_.batch_size / S;
    const std::int64_t spe = train_.n() / ebs;
    if (spe < 1) {
      throw ConfigError(msg("effective batch ", ebs, " exceeds training set of ", train_.n(),
                            " rows"));
    }
    sync_initial_params();

    FitResult res;
    int step = 0;
    bool done = false;
    for (int epoch = 0; epoch < cfg_.epochs && !done; ++epoch) {
      const double lr = lr_at(cfg_.lr_schedule, epoch);
      for (std::int64_t j = 0; j < spe && !done; ++j) {
        const auto t0 = Clock::now();
        for (auto& [peer, ch] : out_) begin_layout(ch, ch.training_layout);

        // Fill: every stage's forward, in stage order.
        std::vector<std::map<int, Tensor>> stage_acts;
        stage_acts.reserve(static_cast<std::size_t>(S));
        std::vector<double> stage_losses(static_cast<std::size_t>(S), 0.0);
        std::vector<Tensor> stage_grad_logits(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) {
          const std::int64_t base = j * ebs + static_cast<std::int64_t>(r_) * cfg_.batch_size +
                                    static_cast<std::int64_t>(s) * mb;
          stage_acts.push_back(forward_window(train_, base, mb, s, s));
          if (loss_rank_) {
            auto sx = output_loss(stage_acts.back().at(output_id_), train_.label_rows(base, mb));
            stage_losses[static_cast<std::size_t>(s)] = sx.loss;
            stage_grad_logits[static_cast<std::size_t>(s)] = std::move(sx.grad_logits);
          }
        }

        // Drain: every stage's backward; parameter gradients accumulate
        // across stages and are averaged once at the end.
        GradientSet grads;
        for (int s = 0; s < S; ++s) {
          backward_stage(s, stage_acts[static_cast<std::size_t>(s)],
                         std::move(stage_grad_logits[static_cast<std::size_t>(s)]), grads);
        }
        if (S > 1) {
          for (auto& [id, g] : grads) {
            scale_inplace(g.dW, 1.0 / static_cast<double>(S));
            scale_inplace(g.db, 1.0 / static_cast<double>(S));
          }
        }

        if (cfg_.num_replicas > 1) {
          std::vector<Communicator::AllreduceHandle> handles;
          handles.reserve(grads.size() * 2);
          for (auto& [id, g] : grads) {
            handles.push_back(part_comm_->start_allreduce(std::move(g.dW), ReduceOp::Mean));
            handles.push_back(part_comm_->start_allreduce(std::move(g.db), ReduceOp::Mean));
          }
          std::size_t k = 0;
          for (auto& [id, g] : grads) {
            g.dW = handles[k++].wait();
            g.db = handles[k++].wait();
          }
        }

        ++step;
        double loss = std::numeric_limits<double>::quiet_NaN();
        if (loss_rank_) {
          double local = stage_losses[0];
          if (S > 1) {
            local = 0.0;
            for (int s = 0; s < S; ++s) local += stage_losses[static_cast<std::size_t>(s)];
            local /= static_cast<double>(S);
          }
          if (cfg_.num_replicas > 1) {
            local = part_comm_->allreduce(Tensor({1}, {local}), ReduceOp::Mean).at(0);
          }
          check_divergence(local, step);
          loss = local;
          if (loss_owner_ && rank_ != 0) {
            Message m;
            m.kind = MsgKind::GradientContribution;
            m.tag = tags::control(tags::Control::LossReport, 0, static_cast<std::uint32_t>(step));
            m.src = rank_;
            m.dst = 0;
            m.payload = Tensor({1}, {loss});
            enqueue_tail(out_.at(0), std::move(m));
          }
        }

        sgd_apply(model_, grads, lr);

        if (rank_ == 0) {
          if (!loss_rank_) {
            Message m = ep_.recv_idle(
                plan_.rank_of(0, plan_.last_partition()),
                tags::control(tags::Control::LossReport, 0, static_cast<std::uint32_t>(step)),
                flush_cb_);
            loss = m.payload.at(0);
            check_divergence(loss, step);
          }
          const double wall_ms = ms_since(t0);
          res.metrics.push_back({step, epoch, loss,
                                 static_cast<double>(ebs) / (wall_ms / 1000.0), wall_ms});
        }
        if (hooks_ && hooks_->on_step) hooks_->on_step(rank_, step, loss, local_checksum());
        if (cfg_.max_steps > 0 && step >= cfg_.max_steps) done = true;
      }
    }

    gather_params();
    double accuracy = -1.0;
    if (cfg_.evaluate && test_ != nullptr && test_->n() > 0) accuracy = evaluate_distributed();
    drain_all();
    world_comm_->barrier();

    if (rank_ == 0) {
      if (!res.metrics.empty()) res.final_loss = res.metrics.back().loss;
      res.test_accuracy = accuracy;
    }
    res.model = std::move(model_);
    return res;
  }

 private:
  bool is_local(int layer) const { return plan_.partition_of_layer(layer) == p_; }

  std::uint64_t local_checksum() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (int id : model_.param_layer_ids()) {
      if (!is_local(id)) continue;
      h = fnv1a_combine(h, static_cast<std::uint64_t>(id));
      h = fnv1a_combine(h, fnv1a_checksum(model_.node(id).W));
      h = fnv1a_combine(h, fnv1a_checksum(model_.node(id).b));
    }
    return h;
  }

  // --- outgoing channel discipline ---------------------------------------

  void begin_layout(OutChannel& ch, const std::vector<std::uint64_t>& layout) {
    if (!ch.pending.empty() || ch.next_slot != static_cast<int>(ch.slot_tags.size())) {
      throw Error(msg("rank ", rank_, ": channel to rank ", ch.peer,
                      " advanced with unproduced slots"));
    }
    ch.slot_tags = layout;
    ch.next_slot = 0;
  }

  void enqueue(OutChannel& ch, int slot, Message m) {
    if (slot < 0 || slot >= static_cast<int>(ch.slot_tags.size()) ||
        ch.slot_tags[static_cast<std::size_t>(slot)] != m.tag) {
      throw Error(msg("rank ", rank_, ": message does not match channel slot ", slot));
    }
    ch.pending.emplace(slot, std::move(m));
    while (true) {
      auto it = ch.pending.find(ch.next_slot);
      if (it == ch.pending.end()) break;
      ch.queue.push_back(std::move(it->second));
      ch.pending.erase(it);
      ++ch.next_slot;
    }
    flush(ch);
  }

  void enqueue_tail(OutChannel& ch, Message m) {
    if (!ch.pending.empty() || ch.next_slot != static_cast<int>(ch.slot_tags.size())) {
      throw Error(msg("rank ", rank_, ": control message before channel slots completed"));
    }
    ch.queue.push_back(std::move(m));
    flush(ch);
  }

  void flush(OutChannel& ch) {
    while (!ch.queue.empty() && ep_.try_send(ch.queue.front())) ch.queue.pop_front();
  }

  void flush_all() {
    for (auto& [peer, ch] : out_) flush(ch);
  }

  void drain_all() {
    const auto deadline =
        Clock::now() + std::chrono::duration_cast<Clock::duration>(
                           std::chrono::duration<double>(cfg_.comm_timeout_sec));
    for (;;) {
      bool empty = true;
      for (auto& [peer, ch] : out_) {
        flush(ch);
        if (!ch.queue.empty()) empty = false;
      }
      if (empty) return;
      if (Clock::now() > deadline) {
        throw TimeoutError(msg("rank ", rank_, ": timed out draining outgoing messages"));
      }
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
  }

  // --- phases --------------------------------------------------------------

  /// Replicas of one partition start from the replica-0 parameters.
  void sync_initial_params() {
    if (cfg_.num_replicas <= 1) return;
    const int root = plan_.rank_of(0, p_);
    for (int id : model_.param_layer_ids()) {
      if (!is_local(id)) continue;
      model_.node(id).W = part_comm_->broadcast(root, model_.node(id).W);
      model_.node(id).b = part_comm_->broadcast(root, model_.node(id).b);
    }
  }

  std::map<int, Tensor> forward_window(const Dataset& data, std::int64_t base, std::int64_t rows,
                                       int stage_tag, int slot_stage) {
    std::map<int, Tensor> acts;
    for (int L : local_layers_) {
      const LayerNode& node = model_.node(L);
      std::vector<int> remote;
      for (int q : node.inputs) {
        if (!is_local(q)) remote.push_back(q);
      }
      std::sort(remote.begin(), remote.end());
      for (int q : remote) {
        const int src_rank = plan_.rank_of(r_, plan_.partition_of_layer(q));
        Message m = ep_.recv_idle(src_rank, tags::edge(q, L, stage_tag), flush_cb_);
        if (m.kind != MsgKind::Activation) {
          throw TransportError(msg("rank ", rank_, ": expected activation on edge ", q, "->", L,
                                   ", got ", msg_kind_name(m.kind)));
        }
        std::vector<std::int64_t> want{rows};
        const auto& prod_shape = model_.node(q).out_shape;
        want.insert(want.end(), prod_shape.begin(), prod_shape.end());
        if (m.payload.shape() != want) {
          throw ShapeError(msg("activation on edge ", q, "->", L, " stage ", stage_tag,
                               ": expected ", shape_str(want), ", got ",
                               shape_str(m.payload.shape())));
        }
        acts[q] = std::move(m.payload);
      }
      if (node.kind == LayerKind::Input) {
        Tensor batch = data.feature_rows(base, rows);
        const Tensor* staged = &batch;
        acts[L] = layer_forward(node, {staged});
      } else {
        std::vector<const Tensor*> ins;
        ins.reserve(node.inputs.size());
        for (int q : node.inputs) ins.push_back(&acts.at(q));
        acts[L] = layer_forward(node, ins);
      }
      auto sends = fwd_sends_.find(L);
      if (sends != fwd_sends_.end()) {
        for (const SendRef& ref : sends->second) {
          const CrossEdge& e = ref.channel->edges[static_cast<std::size_t>(ref.idx)];
          Message m;
          m.kind = MsgKind::Activation;
          m.tag = tags::edge(e.src, e.dst, stage_tag);
          m.src = rank_;
          m.dst = ref.channel->peer;
          m.payload = acts.at(L);
          enqueue(*ref.channel,
                  slot_stage * static_cast<int>(ref.channel->edges.size()) + ref.idx,
                  std::move(m));
        }
      }
    }
    return acts;
  }

  void route_grad(int producer, int consumer, Tensor grad, int stage,
                  std::map<std::pair<int, int>, Tensor>& edge_grad) {
    if (is_local(producer)) {
      edge_grad[{producer, consumer}] = std::move(grad);
      return;
    }
    const SendRef& ref = bwd_sends_.at({producer, consumer});
    Message m;
    m.kind = MsgKind::PartialError;
    m.tag = tags::edge(producer, consumer, stage);
    m.src = rank_;
    m.dst = ref.channel->peer;
    m.payload = std::move(grad);
    enqueue(*ref.channel, stage * static_cast<int>(ref.channel->edges.size()) + ref.idx,
            std::move(m));
  }

  void backward_stage(int s, const std::map<int, Tensor>& acts, Tensor grad_logits,
                      GradientSet& step_grads) {
    std::map<std::pair<int, int>, Tensor> edge_grad;
    for (auto it = local_layers_.rbegin(); it != local_layers_.rend(); ++it) {
      const int L = *it;
      const LayerNode& node = model_.node(L);
      if (L == output_id_) {
        // The loss sink passes logits through, so the gradient w.r.t. its
        // input is the loss gradient itself.
        route_grad(node.inputs[0], L, std::move(grad_logits), s, edge_grad);
        continue;
      }

      Tensor grad;
      bool have = false;
      const auto& cons = model_.consumers()[static_cast<std::size_t>(L)];
      for (auto c_it = cons.rbegin(); c_it != cons.rend(); ++c_it) {
        const int c = *c_it;
        Tensor piece;
        if (is_local(c)) {
          auto e = edge_grad.find({L, c});
          if (e == edge_grad.end()) {
            throw Error(msg("rank ", rank_, ": missing local gradient for edge ", L, "->", c));
          }
          piece = std::move(e->second);
          edge_grad.erase(e);
        } else {
          Message m = ep_.recv_idle(plan_.rank_of(r_, plan_.partition_of_layer(c)),
                                    tags::edge(L, c, s), flush_cb_);
          if (m.kind != MsgKind::PartialError) {
            throw TransportError(msg("rank ", rank_, ": expected partial error on edge ", L,
                                     "->", c, ", got ", msg_kind_name(m.kind)));
          }
          piece = std::move(m.payload);
        }
        if (!have) {
          check_same_shape(piece, acts.at(L), "partial error");
          grad = std::move(piece);
          have = true;
        } else {
          accumulate(grad, piece);
        }
      }
      if (!have) throw Error(msg("rank ", rank_, ": layer ", L, " received no gradient"));
      if (node.kind == LayerKind::Input) continue;  // nothing upstream

      std::vector<const Tensor*> ins;
      ins.reserve(node.inputs.size());
      for (int q : node.inputs) ins.push_back(&acts.at(q));
      if (node.has_params()) {
        LayerGrads g = layer_backward_params(node, ins, grad);
        auto sg = step_grads.find(L);
        if (sg == step_grads.end()) {
          step_grads.emplace(L, std::move(g));
        } else {
          accumulate(sg->second.dW, g.dW);
          accumulate(sg->second.db, g.db);
        }
      }
      std::vector<Tensor> gin = layer_backward_inputs(node, ins, grad);
      for (std::size_t slot = 0; slot < gin.size(); ++slot) {
        route_grad(node.inputs[slot], L, std::move(gin[slot]), s, edge_grad);
      }
    }
    if (!edge_grad.empty()) {
      throw Error(msg("rank ", rank_, ": unconsumed local edge gradients after stage ", s));
    }
  }

  /// Replica-0 partitions ship their trained parameters to rank 0 so its
  /// returned model is the complete trained network.
  void gather_params() {
    if (r_ == 0 && p_ != 0) {
      OutChannel& ch = out_.at(0);
      for (int id : model_.param_layer_ids()) {
        if (!is_local(id)) continue;
        Message mw;
        mw.kind = MsgKind::GradientContribution;
        mw.tag = tags::control(tags::Control::ParamGather, id, 0);
        mw.src = rank_;
        mw.dst = 0;
        mw.payload = model_.node(id).W;
        enqueue_tail(ch, std::move(mw));
        Message mb;
        mb.kind = MsgKind::GradientContribution;
        mb.tag = tags::control(tags::Control::ParamGather, id, 1);
        mb.src = rank_;
        mb.dst = 0;
        mb.payload = model_.node(id).b;
        enqueue_tail(ch, std::move(mb));
      }
    }
    if (rank_ == 0) {
      for (int id : model_.param_layer_ids()) {
        const int q = plan_.partition_of_layer(id);
        if (q == 0) continue;
        const int src = plan_.rank_of(0, q);
        Message mw =
            ep_.recv_idle(src, tags::control(tags::Control::ParamGather, id, 0), flush_cb_);
        check_same_shape(mw.payload, model_.node(id).W, "parameter gather");
        model_.node(id).W = std::move(mw.payload);
        Message mb =
            ep_.recv_idle(src, tags::control(tags::Control::ParamGather, id, 1), flush_cb_);
        check_same_shape(mb.payload, model_.node(id).b, "parameter gather");
        model_.node(id).b = std::move(mb.payload);
      }
    }
  }

  /// Replica 0 streams the test set through the partitioned model in
  /// chunks; identical kernels and identical chunking make the result equal
  /// to the single-process evaluation, exactly.
  double evaluate_distributed() {
    if (r_ != 0) return -1.0;
    const std::int64_t n = test_->n();
    const std::int64_t ebs = cfg_.effective_batch();
    const std::int64_t chunks = (n + ebs - 1) / ebs;
    if (chunks > 65535) {
      throw ConfigError(msg("test set of ", n, " rows needs ", chunks,
                            " eval chunks; the tag space allows 65535"));
    }
    std::int64_t correct = 0;
    for (std::int64_t c = 0; c < chunks; ++c) {
      const std::int64_t base = c * ebs;
      const std::int64_t rows = std::min(ebs, n - base);
      for (auto& [peer, ch] : out_) {
        std::vector<std::uint64_t> layout;
        if (ch.forward) {
          for (const auto& e : ch.edges) {
            layout.push_back(tags::edge(e.src, e.dst, static_cast<int>(c)));
          }
        }
        begin_layout(ch, layout);
      }
      auto acts = forward_window(*test_, base, rows, static_cast<int>(c), 0);
      if (loss_rank_) {
        correct += count_correct(acts.at(output_id_), test_->label_rows(base, rows));
      }
    }
    if (loss_owner_ && rank_ != 0) {
      Message m;
      m.kind = MsgKind::GradientContribution;
      m.tag = tags::control(tags::Control::EvalReport, 0, 0);
      m.src = rank_;
      m.dst = 0;
      m.payload = Tensor({1}, {static_cast<double>(correct)});
      enqueue_tail(out_.at(0), std::move(m));
    }
    if (rank_ == 0) {
      if (!loss_rank_) {
        Message m = ep_.recv_idle(plan_.rank_of(0, plan_.last_partition()),
                                  tags::control(tags::Control::EvalReport, 0, 0), flush_cb_);
        correct = static_cast<std::int64_t>(m.payload.at(0));
      }
      return static_cast<double>(correct) / static_cast<double>(n);
    }
    return -1.0;
  }

  Endpoint& ep_;
  const Dataset& train_;
  const Dataset* test_;
  const TrainConfig& cfg_;
  const FitHooks* hooks_;
  ModelGraph model_;
  PartitionPlan plan_;
  int rank_ = 0;
  int p_ = 0;
  int r_ = 0;
  int output_id_ = -1;
  bool loss_rank_ = false;
  bool loss_owner_ = false;
  std::vector<int> local_layers_;
  std::map<int, OutChannel> out_;                       // peer rank -> channel
  std::map<int, std::vector<SendRef>> fwd_sends_;       // producer layer -> refs
  std::map<std::pair<int, int>, SendRef> bwd_sends_;    // (src, dst) -> ref
  std::optional<Communicator> part_comm_;
  std::optional<Communicator> world_comm_;
  std::function<void()> flush_cb_;
};

}  // namespace

FitResult fit_rank(Endpoint& ep, const ModelGraph& model0, const Dataset& train,
                   const Dataset* test, const TrainConfig& cfg, const FitHooks* hooks) {
  cfg.validate();
  RankWorker worker(ep, model0, train, test, cfg, hooks);
  return worker.run();
}

FitResult fit_sim(const ModelGraph& model0, const Dataset& train, const Dataset* test,
                  const TrainConfig& cfg, const FitHooks* hooks, SimWorld* world) {
  cfg.validate();
  const int w = cfg.num_partitions * cfg.num_replicas;
  std::unique_ptr<SimWorld> owned;
  if (world == nullptr) {
    owned = std::make_unique<SimWorld>(w, cfg.buffer_capacity);
    world = owned.get();
  } else if (world->world_size() != w) {
    throw ConfigError(msg("provided world has ", world->world_size(), " ranks, config wants ", w));
  }

  std::vector<std::unique_ptr<Endpoint>> eps;
  eps.reserve(static_cast<std::size_t>(w));
  for (int rank = 0; rank < w; ++rank) eps.push_back(world->endpoint(rank));

  std::vector<FitResult> results(static_cast<std::size_t>(w));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(w));
  for (int rank = 0; rank < w; ++rank) {
    threads.emplace_back([&, rank] {
      try {
        results[static_cast<std::size_t>(rank)] =
            fit_rank(*eps[static_cast<std::size_t>(rank)], model0, train, test, cfg, hooks);
      } catch (...) {
        errors[static_cast<std::size_t>(rank)] = std::current_exception();
        world->close(msg("rank ", rank, " failed"));
      }
    });
  }
  for (auto& t : threads) t.join();

  // Report the most causal failure: an error that is neither a timeout nor
  // a transport teardown usually triggered the others.
  auto classify = [](const std::exception_ptr& e) -> int {
    if (!e) return 3;
    try {
      std::rethrow_exception(e);
    } catch (const TimeoutError&) {
      return 1;
    } catch (const TransportError&) {
      return 2;
    } catch (...) {
      return 0;
    }
  };
  int best_rank = -1;
  int best_class = 3;
  for (int rank = 0; rank < w; ++rank) {
    const int c = classify(errors[static_cast<std::size_t>(rank)]);
    if (c < best_class) {
      best_class = c;
      best_rank = rank;
    }
  }
  if (best_rank >= 0 && best_class < 3) {
    std::rethrow_exception(errors[static_cast<std::size_t>(best_rank)]);
  }
  return std::move(results[0]);
}

}  // namespace laminar

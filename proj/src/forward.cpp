#include <algorithm>
#include <cmath>
#include <string>

#include "pdrop/errors.hpp"
#include "pdrop/toymodel.hpp"

namespace pdrop::model {

namespace {

using layout::TokenRole;
using num::Matrix;

struct LayerOutput {
    Matrix q;  // tokens x d, post-rotary
    Matrix k;  // tokens x d, post-rotary
};

struct Activations {
    Matrix x;
    std::vector<std::size_t> positions;
    std::vector<TokenRole> roles;
};

Matrix rmsnorm_rows(const Matrix& x, std::span<const double> gain, double eps) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto normed = num::rmsnorm(x.row(r), gain, eps);
        std::copy(normed.begin(), normed.end(), out.row(r).begin());
    }
    return out;
}

void rotate_heads(Matrix& m, std::span<const std::size_t> positions, const ModelConfig& cfg) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            num::rope_rotate_inplace(row.subspan(h * cfg.head_dim, cfg.head_dim), positions[r], cfg.rope_theta);
        }
    }
}

// One pre-norm decoder layer, updating `act.x` in place.
LayerOutput run_layer(const LayerWeights& lw, const ModelConfig& cfg, Activations& act,
                      std::vector<Matrix>* attention) {
    const std::size_t n = act.x.rows();
    const std::size_t hd = cfg.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    const Matrix xn = rmsnorm_rows(act.x, lw.attn_norm, cfg.rmsnorm_eps);
    LayerOutput out{num::matmul(xn, lw.w_q), num::matmul(xn, lw.w_k)};
    const Matrix v = num::matmul(xn, lw.w_v);
    rotate_heads(out.q, act.positions, cfg);
    rotate_heads(out.k, act.positions, cfg);

    Matrix context(n, cfg.hidden_size);
    std::vector<double> probs;
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const std::size_t off = h * hd;
        Matrix head_probs;
        if (attention) {
            head_probs = Matrix(n, n);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto qi = out.q.row(i).subspan(off, hd);
            // Storage order follows position order, so the causal window of
            // token i is the prefix [0, i].
            probs.assign(i + 1, 0.0);
            for (std::size_t j = 0; j <= i; ++j) {
                probs[j] = num::dot(qi, out.k.row(j).subspan(off, hd)) * scale;
            }
            num::softmax_inplace(probs);
            auto ci = context.row(i).subspan(off, hd);
            for (std::size_t j = 0; j <= i; ++j) {
                const auto vj = v.row(j).subspan(off, hd);
                for (std::size_t c = 0; c < hd; ++c) {
                    ci[c] += probs[j] * vj[c];
                }
            }
            if (attention) {
                std::copy(probs.begin(), probs.end(), head_probs.row(i).begin());
            }
        }
        if (attention) {
            attention->push_back(std::move(head_probs));
        }
    }

    const Matrix attn_out = num::matmul(context, lw.w_o);
    for (std::size_t i = 0; i < act.x.size(); ++i) {
        act.x.data()[i] += attn_out.data()[i];
    }

    const Matrix xn2 = rmsnorm_rows(act.x, lw.ffn_norm, cfg.rmsnorm_eps);
    Matrix gate = num::matmul(xn2, lw.w_gate);
    const Matrix up = num::matmul(xn2, lw.w_up);
    for (std::size_t i = 0; i < gate.size(); ++i) {
        gate.data()[i] = num::silu(gate.data()[i]) * up.data()[i];
    }
    const Matrix ffn_out = num::matmul(gate, lw.w_down);
    for (std::size_t i = 0; i < act.x.size(); ++i) {
        act.x.data()[i] += ffn_out.data()[i];
    }
    return out;
}

Activations embed(const DecoderWeights& w, const layout::MultimodalSequence& seq) {
    const ModelConfig& cfg = w.config;
    if (seq.size() == 0) {
        throw InputError("cannot run the decoder on an empty sequence");
    }
    if (seq.image_count() > 0 && seq.embedding_dim() != cfg.hidden_size) {
        throw InputError("image embeddings have width " + std::to_string(seq.embedding_dim()) +
                         ", model hidden size is " + std::to_string(cfg.hidden_size));
    }
    Activations act;
    act.x = Matrix(seq.size(), cfg.hidden_size);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const layout::Token& t = seq.tokens()[i];
        if (t.position >= cfg.max_positions) {
            throw InputError("position " + std::to_string(t.position) + " exceeds the maximum " +
                             std::to_string(cfg.max_positions - 1));
        }
        std::span<const double> src;
        if (t.role == TokenRole::Image) {
            src = seq.image_embeddings().row(t.image_row);
        } else {
            if (static_cast<std::size_t>(t.token_id) >= cfg.vocab_size) {
                throw InputError("token id " + std::to_string(t.token_id) + " outside the vocabulary");
            }
            src = w.embedding.row(static_cast<std::size_t>(t.token_id));
        }
        std::copy(src.begin(), src.end(), act.x.row(i).begin());
        act.positions.push_back(t.position);
        act.roles.push_back(t.role);
    }
    return act;
}

std::vector<std::size_t> image_rows(const Activations& act) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < act.roles.size(); ++i) {
        if (act.roles[i] == TokenRole::Image) {
            rows.push_back(i);
        }
    }
    return rows;
}

std::size_t last_instruction_row(const Activations& act) {
    for (std::size_t i = act.roles.size(); i-- > 0;) {
        if (act.roles[i] == TokenRole::Instruction) {
            return i;
        }
    }
    throw InputError("pruning requires an instruction token");
}

void validate_events(std::span<const pruner::DropEvent> events, std::size_t num_layers) {
    std::size_t prev = 0;
    for (const auto& e : events) {
        if (e.after_layer == 0 || e.after_layer >= num_layers) {
            throw ConfigError("drop after layer " + std::to_string(e.after_layer) + " is outside [1, " +
                              std::to_string(num_layers - 1) + "]");
        }
        if (e.after_layer <= prev) {
            throw ConfigError("drop layers must be strictly increasing");
        }
        prev = e.after_layer;
    }
}

void check_decision(const pruner::PruneDecision& d, std::span<const std::size_t> alive, std::size_t keep) {
    if (d.kept.size() != keep || d.kept.size() + d.dropped.size() != alive.size()) {
        throw ConfigError("ranker returned " + std::to_string(d.kept.size()) + " kept tokens, expected " +
                          std::to_string(keep));
    }
    std::vector<std::size_t> all = d.kept;
    all.insert(all.end(), d.dropped.begin(), d.dropped.end());
    std::sort(all.begin(), all.end());
    if (!std::equal(all.begin(), all.end(), alive.begin(), alive.end())) {
        throw ConfigError("ranker decision does not partition the surviving image tokens");
    }
}

BoundaryRecord rank_boundary(const LayerOutput& qk, const Activations& act, const ModelConfig& cfg,
                             std::size_t layer) {
    const std::size_t hd = cfg.head_dim;
    const auto rows = image_rows(act);
    const std::size_t last = last_instruction_row(act);

    BoundaryRecord rec;
    rec.layer = layer;
    rec.q_last = Matrix(cfg.num_heads, hd);
    rec.k_image.assign(cfg.num_heads, Matrix(rows.size(), hd));
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const auto q = qk.q.row(last).subspan(h * hd, hd);
        std::copy(q.begin(), q.end(), rec.q_last.row(h).begin());
        for (std::size_t t = 0; t < rows.size(); ++t) {
            const auto k = qk.k.row(rows[t]).subspan(h * hd, hd);
            std::copy(k.begin(), k.end(), rec.k_image[h].row(t).begin());
        }
    }
    rec.scores = pruner::rank_image_tokens(rec.q_last, rec.k_image, hd);
    rec.scores.boundary_layer = layer;
    for (std::size_t r : rows) {
        rec.scores.positions.push_back(act.positions[r]);
    }
    return rec;
}

void apply_injection(Activations& act, const Injection& inj) {
    const auto it = std::find(act.positions.begin(), act.positions.end(), inj.position);
    if (it == act.positions.end()) {
        throw ConfigError("injection targets position " + std::to_string(inj.position) +
                          ", which is not alive at layer " + std::to_string(inj.layer));
    }
    if (inj.hidden.size() != act.x.cols()) {
        throw ConfigError("injected hidden state has the wrong width");
    }
    auto row = act.x.row(static_cast<std::size_t>(it - act.positions.begin()));
    std::copy(inj.hidden.begin(), inj.hidden.end(), row.begin());
}

void remove_dropped(Activations& act, std::span<const std::size_t> dropped) {
    if (dropped.empty()) {
        return;
    }
    std::vector<std::size_t> keep_rows;
    Activations next;
    for (std::size_t i = 0; i < act.positions.size(); ++i) {
        const bool drop = act.roles[i] == TokenRole::Image &&
                          std::binary_search(dropped.begin(), dropped.end(), act.positions[i]);
        if (!drop) {
            keep_rows.push_back(i);
            next.positions.push_back(act.positions[i]);
            next.roles.push_back(act.roles[i]);
        }
    }
    next.x = act.x.select_rows(keep_rows);
    act = std::move(next);
}

}  // namespace

ForwardTrace forward_with_drops(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                                std::span<const pruner::DropEvent> events, const Ranker& ranker,
                                const ForwardOptions& options) {
    const ModelConfig& cfg = w.config;
    validate_events(events, cfg.num_layers);
    if (options.injection && (options.injection->layer == 0 || options.injection->layer > cfg.num_layers)) {
        throw ConfigError("injection layer out of range");
    }

    Activations act = embed(w, seq);
    ForwardTrace trace;
    trace.stage_kept.push_back(layout::image_indices(seq));

    std::size_t next_event = 0;
    for (std::size_t layer = 1; layer <= cfg.num_layers; ++layer) {
        std::vector<Matrix>* attn = nullptr;
        if (options.record_attention) {
            trace.attention.emplace_back();
            attn = &trace.attention.back();
        }
        const LayerOutput qk = run_layer(w.layers[layer - 1], cfg, act, attn);

        if (options.injection && options.injection->layer == layer) {
            apply_injection(act, *options.injection);
        }
        trace.hidden.push_back(act.x);
        trace.positions.push_back(act.positions);

        if (next_event < events.size() && events[next_event].after_layer == layer) {
            const pruner::DropEvent& event = events[next_event];
            BoundaryRecord rec = rank_boundary(qk, act, cfg, layer);
            if (event.keep > rec.scores.values.size()) {
                throw ConfigError("drop after layer " + std::to_string(layer) + " keeps " +
                                  std::to_string(event.keep) + " of only " +
                                  std::to_string(rec.scores.values.size()) + " image tokens");
            }
            BoundaryState state;
            state.layer = layer;
            state.event = next_event;
            state.keep = event.keep;
            state.q_last = &rec.q_last;
            state.k_image = rec.k_image;
            state.scores = &rec.scores;
            rec.decision = ranker(state);
            rec.decision.boundary_layer = layer;
            check_decision(rec.decision, rec.scores.positions, event.keep);

            remove_dropped(act, rec.decision.dropped);
            trace.stage_kept.push_back(rec.decision.kept);
            trace.boundaries.push_back(std::move(rec));
            ++next_event;
        }
    }

    trace.logits = num::matmul(act.x, w.lm_head);
    trace.final_positions = act.positions;
    trace.final_roles = act.roles;
    return trace;
}

ForwardTrace forward_full(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                          const ForwardOptions& options) {
    return forward_with_drops(w, seq, {}, attention_ranker(), options);
}

ForwardTrace forward_pruned(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                            const pruner::StageSchedule& schedule, const Ranker& ranker,
                            const ForwardOptions& options) {
    if (schedule.num_layers != w.config.num_layers) {
        throw ConfigError("schedule built for " + std::to_string(schedule.num_layers) + " layers, model has " +
                          std::to_string(w.config.num_layers));
    }
    if (schedule.stage_token_counts.empty() || schedule.stage_token_counts.front() != seq.image_count()) {
        throw ConfigError("schedule built for a different image-token count than the sequence holds");
    }
    const auto events = pruner::drop_events(schedule);
    return forward_with_drops(w, seq, events, ranker, options);
}

ForwardTrace inject_at_boundary(const DecoderWeights& w, const layout::MultimodalSequence& seq,
                                const pruner::StageSchedule& schedule, const Ranker& ranker,
                                Injection injection) {
    const auto& b = schedule.boundary_layers;
    if (std::find(b.begin(), b.end(), injection.layer) == b.end()) {
        throw ConfigError("injection layer " + std::to_string(injection.layer) + " is not a drop boundary");
    }
    ForwardOptions options;
    options.injection = std::move(injection);
    return forward_pruned(w, seq, schedule, ranker, options);
}

}  // namespace pdrop::model

#include "tfe/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "tfe/kernels.hpp"
#include "tfe/ops.hpp"

namespace tfe::model {

namespace {

template <class T>
using EmbedFn = std::function<TensorT<T>(RowRange, std::size_t, std::size_t)>;

template <class T, class Block>
void ffn_inplace(const Block& b, TensorT<T>& x) {
    auto h = ops::rmsnorm_rows(x, b.norm_ffn);
    auto a = ops::linear(h, b.ffn_w1, &b.ffn_b1);
    for (T& v : a.values()) v = ops::gelu(v);
    const auto o = ops::linear(a, b.ffn_w2, &b.ffn_b2);
    kern::add(x.data(), o.data(), x.data(), x.numel());
}

// Pre-norm cross-attention sublayer + feed-forward, in place on the queries.
template <class T>
void attn_block_inplace(const BlockWeightsT<T>& b, TensorT<T>& xq, const TensorT<T>& kv,
                        std::size_t heads, std::size_t n_ctx) {
    const std::size_t m = xq.dim(0), d = xq.dim(1), n = kv.dim(0);
    const std::size_t dh = d / heads;
    const auto hq = ops::rmsnorm_rows(xq, b.norm_attn);
    const auto hk = ops::rmsnorm_rows(kv, b.norm_kv);
    auto q = reshape(ops::linear(hq, b.wq), {m, heads, dh});
    auto k = reshape(ops::linear(hk, b.wk), {n, heads, dh});
    auto v = reshape(ops::linear(hk, b.wv), {n, heads, dh});
    auto attn = b.has_qass()
                    ? ops::attention(q, k, v, ops::SoftmaxMode::qassmax, &b.qass, n_ctx)
                    : ops::attention(q, k, v);
    const auto delta = ops::linear(reshape(std::move(attn), {m, d}), b.wo);
    kern::add(xq.data(), delta.data(), xq.data(), xq.numel());
    ffn_inplace(b, xq);
}

template <class T>
TensorT<T> take_group(const TensorT<T>& x, std::size_t g) {
    const std::size_t r = x.dim(0), d = x.dim(2);
    TensorT<T> out({r, d});
    for (std::size_t i = 0; i < r; ++i) {
        const auto src = x.row(i, g);
        std::copy(src.begin(), src.end(), out.data() + i * d);
    }
    return out;
}

template <class T>
void put_group(TensorT<T>& x, std::size_t g, const TensorT<T>& xg) {
    const std::size_t r = x.dim(0), d = x.dim(2);
    for (std::size_t i = 0; i < r; ++i) {
        const auto src = xg.row(i);
        std::copy(src.begin(), src.end(), x.data() + (i * x.dim(1) + g) * d);
    }
}

// Contiguous [K, D] state of one column group.
template <class T>
TensorT<T> state_slice(const TensorT<T>& states, std::size_t g) {
    const std::size_t k = states.dim(1), d = states.dim(2);
    TensorT<T> out({k, d});
    std::copy(states.data() + g * k * d, states.data() + (g + 1) * k * d, out.data());
    return out;
}

// Stage-1 row path: rows of every group attend to that group's inducing
// state, for blocks [0, upto).
template <class T>
void row_blocks_apply(const ModelConfig& cfg, const ModelWeightsT<T>& w, TensorT<T>& x,
                      std::span<const TensorT<T>> states, std::size_t g0, std::size_t upto) {
    const std::size_t gb = x.dim(1);
    for (std::size_t g = 0; g < gb; ++g) {
        auto xg = take_group(x, g);
        for (std::size_t b = 0; b < upto; ++b) {
            const auto kv = state_slice(states[b], g0 + g);
            attn_block_inplace(w.stage1[b].row, xg, kv, cfg.dist_heads, cfg.n_inducing);
        }
        put_group(x, g, xg);
    }
}

template <class T>
std::vector<TensorT<T>> inducing_states_impl(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                                             const EmbedFn<T>& embed, std::size_t n_groups,
                                             std::span<const RowRange> chunks,
                                             std::size_t col_batch) {
    const std::size_t d = cfg.embed_dim;
    const std::size_t heads = cfg.dist_heads;
    const std::size_t dh = d / heads;
    const std::size_t n_ind = cfg.n_inducing;
    std::size_t n_ctx = 0;
    for (const RowRange& c : chunks) n_ctx += c.size();
    if (n_ctx == 0) throw DimError("stage 1: no context rows");
    col_batch = std::clamp<std::size_t>(col_batch, 1, n_groups);

    std::vector<TensorT<T>> states;
    states.reserve(cfg.dist_blocks);
    for (std::size_t b = 0; b < cfg.dist_blocks; ++b) {
        states.emplace_back(std::vector<std::size_t>{n_groups, n_ind, d});
    }

    const T log_ctx = std::log(static_cast<T>(n_ctx));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    for (std::size_t g0 = 0; g0 < n_groups; g0 += col_batch) {
        const std::size_t gb = std::min(col_batch, n_groups - g0);
        for (std::size_t b = 0; b < cfg.dist_blocks; ++b) {
            const Stage1BlockT<T>& block = w.stage1[b];
            const auto hq = ops::rmsnorm_rows(block.inducing_init, block.ind.norm_attn);
            const auto q = ops::linear(hq, block.ind.wq);  // [K, D]

            // Per-query multiplier: query-aware scale times log context length.
            TensorT<T> mult({n_ind, heads});
            for (std::size_t kq = 0; kq < n_ind; ++kq) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::span<const T> qv{q.data() + kq * d + h * dh, dh};
                    mult(kq, h) = block.ind.qass.scale(qv) * log_ctx * inv_sqrt;
                }
            }

            // Streaming softmax accumulators per (group, head, inducing query),
            // kept in double so chunk boundaries cannot perturb the result.
            DTensor run_max({gb, heads, n_ind}, -std::numeric_limits<double>::infinity());
            DTensor run_den({gb, heads, n_ind}, 0.0);
            DTensor run_acc({gb * heads * n_ind, dh}, 0.0);

            for (const RowRange& chunk : chunks) {
                auto x = embed(chunk, g0, g0 + gb);
                row_blocks_apply(cfg, w, x, std::span<const TensorT<T>>{states.data(), b}, g0, b);
                for (std::size_t g = 0; g < gb; ++g) {
                    const auto xg = take_group(x, g);
                    const auto hk = ops::rmsnorm_rows(xg, block.ind.norm_kv);
                    const auto kmat = ops::linear(hk, block.ind.wk);  // [r, D]
                    const auto vmat = ops::linear(hk, block.ind.wv);
                    const std::size_t r = xg.dim(0);
                    DTensor logits({r});
                    for (std::size_t h = 0; h < heads; ++h) {
                        for (std::size_t kq = 0; kq < n_ind; ++kq) {
                            const T* qv = q.data() + kq * d + h * dh;
                            double cmax = -std::numeric_limits<double>::infinity();
                            for (std::size_t j = 0; j < r; ++j) {
                                logits(j) = static_cast<double>(
                                                kern::dot(qv, kmat.data() + j * d + h * dh, dh)) *
                                            static_cast<double>(mult(kq, h));
                                cmax = std::max(cmax, logits(j));
                            }
                            double& m = run_max(g, h, kq);
                            double& den = run_den(g, h, kq);
                            double* acc = run_acc.data() + ((g * heads + h) * n_ind + kq) * dh;
                            const double new_m = std::max(m, cmax);
                            if (m > -std::numeric_limits<double>::infinity() && m != new_m) {
                                const double factor = std::exp(m - new_m);
                                den *= factor;
                                for (std::size_t t = 0; t < dh; ++t) acc[t] *= factor;
                            }
                            m = new_m;
                            for (std::size_t j = 0; j < r; ++j) {
                                const double e = std::exp(logits(j) - new_m);
                                den += e;
                                const T* vj = vmat.data() + j * d + h * dh;
                                for (std::size_t t = 0; t < dh; ++t) {
                                    acc[t] += e * static_cast<double>(vj[t]);
                                }
                            }
                        }
                    }
                }
            }

            for (std::size_t g = 0; g < gb; ++g) {
                TensorT<T> attn({n_ind, d});
                for (std::size_t kq = 0; kq < n_ind; ++kq) {
                    for (std::size_t h = 0; h < heads; ++h) {
                        const double* acc = run_acc.data() + ((g * heads + h) * n_ind + kq) * dh;
                        const double den = run_den(g, h, kq);
                        T* dst = attn.data() + kq * d + h * dh;
                        for (std::size_t t = 0; t < dh; ++t) {
                            dst[t] = static_cast<T>(acc[t] / den);
                        }
                    }
                }
                auto h_state = block.inducing_init;  // residual source
                const auto delta = ops::linear(attn, block.ind.wo);
                kern::add(h_state.data(), delta.data(), h_state.data(), h_state.numel());
                ffn_inplace(block.ind, h_state);
                std::copy(h_state.data(), h_state.data() + n_ind * d,
                          states[b].data() + (g0 + g) * n_ind * d);
            }
        }
    }
    return states;
}

template <class T>
void require_train_first(const DatasetViewT<T>& view) {
    bool seen_test = false;
    for (std::uint8_t f : view.train_flags) {
        if (f == 0) {
            seen_test = true;
        } else if (seen_test) {
            throw DimError("view: train rows must precede test rows");
        }
    }
}

template <class T>
void rope_heads_inplace(TensorT<T>& x, std::span<const T> pos, std::size_t heads, T base) {
    const std::size_t rows = x.dim(0), d = x.dim(1);
    const std::size_t dh = d / heads;
    for (std::size_t r = 0; r < rows; ++r) {
        if (pos[r] == T(0)) continue;
        for (std::size_t h = 0; h < heads; ++h) {
            T* v = x.data() + r * d + h * dh;
            for (std::size_t i = 0; i < dh / 2; ++i) {
                const T theta =
                    pos[r] * std::pow(base, -static_cast<T>(2 * i) / static_cast<T>(dh));
                const T c = std::cos(theta), s = std::sin(theta);
                const T a = v[2 * i], bv = v[2 * i + 1];
                v[2 * i] = c * a - s * bv;
                v[2 * i + 1] = s * a + c * bv;
            }
        }
    }
}

}  // namespace

template <class T>
TensorT<T> embed_cells(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                       const DatasetViewT<T>& view, RowRange rows, std::size_t g_begin,
                       std::size_t g_end) {
    const std::size_t f = view.n_features();
    if (f == 0) throw DimError("embed_cells: view has no features");
    const std::size_t gs = cfg.feature_group_size;
    const std::size_t nr = rows.size();
    const std::size_t ng = g_end - g_begin;

    TensorT<T> inputs({nr * ng, 2 * gs});
    for (std::size_t r = 0; r < nr; ++r) {
        const std::size_t vr = rows.begin + r;
        for (std::size_t g = 0; g < ng; ++g) {
            T* dst = inputs.data() + (r * ng + g) * 2 * gs;
            for (std::size_t j = 0; j < gs; ++j) {
                const std::size_t feat = ((g_begin + g) * gs + j) % f;
                dst[2 * j] = view.x(vr, feat);
                dst[2 * j + 1] = static_cast<T>(view.nan_mask[vr * f + feat]);
            }
        }
    }
    auto out = ops::linear(inputs, w.cell_proj_w, &w.cell_proj_b);  // [nr*ng, D]

    const std::size_t d = cfg.embed_dim;
    for (std::size_t r = 0; r < nr; ++r) {
        const std::size_t vr = rows.begin + r;
        if (view.train_flags[vr] == 0) continue;
        if (view.task == prior::Task::classification) {
            const auto cls = static_cast<std::size_t>(view.y_class[vr]);
            if (cls >= cfg.c_max) throw UnsupportedError("embed_cells: class above the ceiling");
            for (std::size_t g = 0; g < ng; ++g) {
                kern::add(out.data() + (r * ng + g) * d, w.e_col.data() + cls * d,
                          out.data() + (r * ng + g) * d, d);
            }
        } else {
            const T y = view.y_target[vr];
            for (std::size_t g = 0; g < ng; ++g) {
                T* dst = out.data() + (r * ng + g) * d;
                for (std::size_t i = 0; i < d; ++i) {
                    dst[i] += w.target_w(i) * y + w.target_b(i);
                }
            }
        }
    }
    return reshape(std::move(out), {nr, ng, d});
}

template <class T>
TensorT<T> embed_cells(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                       const DatasetViewT<T>& view) {
    return embed_cells(cfg, w, view, RowRange{0, view.n_rows()}, 0,
                       cfg.n_groups(view.n_features()));
}

template <class T>
std::vector<TensorT<T>> stage1_inducing_states(const ModelConfig& cfg,
                                               const ModelWeightsT<T>& w,
                                               const DatasetViewT<T>& view,
                                               std::span<const RowRange> train_chunks,
                                               std::size_t col_batch) {
    const EmbedFn<T> embed = [&](RowRange rows, std::size_t g0, std::size_t g1) {
        return embed_cells(cfg, w, view, rows, g0, g1);
    };
    return inducing_states_impl(cfg, w, embed, cfg.n_groups(view.n_features()), train_chunks,
                                col_batch);
}

template <class T>
TensorT<T> stage1_apply_rows(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                             const TensorT<T>& grouped, std::span<const TensorT<T>> inducing) {
    TensorT<T> x = grouped;
    row_blocks_apply(cfg, w, x, inducing, 0, cfg.dist_blocks);
    return x;
}

template <class T>
std::pair<TensorT<T>, std::vector<TensorT<T>>> stage1_distribution_embed(
    const ModelConfig& cfg, const ModelWeightsT<T>& w, const TensorT<T>& grouped) {
    const std::size_t n_groups = grouped.dim(1);
    const EmbedFn<T> embed = [&](RowRange rows, std::size_t g0, std::size_t g1) {
        TensorT<T> out({rows.size(), g1 - g0, grouped.dim(2)});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t g = g0; g < g1; ++g) {
                const auto src = grouped.row(rows.begin + r, g);
                std::copy(src.begin(), src.end(),
                          out.data() + (r * (g1 - g0) + g - g0) * grouped.dim(2));
            }
        }
        return out;
    };
    const RowRange all{0, grouped.dim(0)};
    auto states = inducing_states_impl(cfg, w, embed, n_groups,
                                       std::span<const RowRange>{&all, 1}, n_groups);
    auto cells = stage1_apply_rows(cfg, w, grouped,
                                   std::span<const TensorT<T>>{states.data(), states.size()});
    return {std::move(cells), std::move(states)};
}

template <class T>
TensorT<T> stage2_aggregate(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                            const TensorT<T>& cells) {
    const std::size_t r_count = cells.dim(0), n_groups = cells.dim(1), d = cells.dim(2);
    const std::size_t n_cls = cfg.n_cls_tokens;
    const std::size_t seq = n_cls + n_groups;
    const std::size_t heads = cfg.agg_heads;
    const std::size_t dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    TensorT<T> tokens({r_count * seq, d});
    std::vector<T> pos(r_count * seq);
    for (std::size_t r = 0; r < r_count; ++r) {
        for (std::size_t t = 0; t < seq; ++t) {
            T* dst = tokens.data() + (r * seq + t) * d;
            if (t < n_cls) {
                std::copy(w.cls_tokens.data() + t * d, w.cls_tokens.data() + (t + 1) * d, dst);
                pos[r * seq + t] = T(0);
            } else {
                const auto src = cells.row(r, t - n_cls);
                std::copy(src.begin(), src.end(), dst);
                pos[r * seq + t] = static_cast<T>(t - n_cls + 1);
            }
        }
    }

    for (const BlockWeightsT<T>& block : w.stage2) {
        const auto hq = ops::rmsnorm_rows(tokens, block.norm_attn);
        const auto hk = ops::rmsnorm_rows(tokens, block.norm_kv);
        auto q = ops::linear(hq, block.wq);
        auto k = ops::linear(hk, block.wk);
        const auto v = ops::linear(hk, block.wv);
        rope_heads_inplace(q, std::span<const T>{pos}, heads, static_cast<T>(cfg.rope_base));
        rope_heads_inplace(k, std::span<const T>{pos}, heads, static_cast<T>(cfg.rope_base));

        TensorT<T> attn({r_count * seq, d});
        TensorT<T> logits({seq});
        for (std::size_t r = 0; r < r_count; ++r) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t tq = 0; tq < seq; ++tq) {
                    const T* qv = q.data() + (r * seq + tq) * d + h * dh;
                    for (std::size_t tk = 0; tk < seq; ++tk) {
                        logits(tk) =
                            kern::dot(qv, k.data() + (r * seq + tk) * d + h * dh, dh) * inv_sqrt;
                    }
                    ops::softmax_inplace<T>(logits.values());
                    T* dst = attn.data() + (r * seq + tq) * d + h * dh;
                    for (std::size_t tk = 0; tk < seq; ++tk) {
                        kern::axpy(logits(tk), v.data() + (r * seq + tk) * d + h * dh, dst, dh);
                    }
                }
            }
        }
        const auto delta = ops::linear(attn, block.wo);
        kern::add(tokens.data(), delta.data(), tokens.data(), tokens.numel());
        ffn_inplace(block, tokens);
    }

    const auto final_tokens = ops::rmsnorm_rows(tokens, w.stage2_norm);
    TensorT<T> out({r_count, n_cls * d});
    for (std::size_t r = 0; r < r_count; ++r) {
        for (std::size_t t = 0; t < n_cls; ++t) {
            std::copy(final_tokens.data() + (r * seq + t) * d,
                      final_tokens.data() + (r * seq + t + 1) * d,
                      out.data() + r * n_cls * d + t * d);
        }
    }
    return out;
}

template <class T>
void pre_icl_rows(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                  const DatasetViewT<T>& view, RowRange rows,
                  std::span<const TensorT<T>> inducing, TensorT<T>& row_embeds) {
    auto x = embed_cells(cfg, w, view, rows, 0, cfg.n_groups(view.n_features()));
    row_blocks_apply(cfg, w, x, inducing, 0, cfg.dist_blocks);
    const auto cells = ops::rmsnorm_rows(x, w.stage1_norm);
    const auto embeds = stage2_aggregate(cfg, w, cells);
    std::copy(embeds.data(), embeds.data() + embeds.numel(),
              row_embeds.data() + rows.begin * cfg.icl_emsize());
}

template <class T>
TensorT<T> stage3_icl(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                      const TensorT<T>& row_embeds, const DatasetViewT<T>& view,
                      IclCaptureT<T>* capture) {
    const std::size_t r_count = row_embeds.dim(0);
    const std::size_t e = cfg.icl_emsize();
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t r = 0; r < r_count; ++r) {
        (view.train_flags[r] != 0 ? train_idx : test_idx).push_back(r);
    }
    const std::size_t n = train_idx.size(), m = test_idx.size();
    if (n == 0) throw ConfigError("stage 3: zero train rows");

    TensorT<T> x = row_embeds;
    for (std::size_t r : train_idx) {
        if (view.task == prior::Task::classification) {
            const auto cls = static_cast<std::size_t>(view.y_class[r]);
            if (cls >= cfg.c_max) throw UnsupportedError("stage 3: class above the ceiling");
            kern::add(x.data() + r * e, w.e_icl.data() + cls * e, x.data() + r * e, e);
        } else {
            const T y = view.y_target[r];
            T* dst = x.data() + r * e;
            for (std::size_t i = 0; i < e; ++i) dst[i] += w.target_icl_w(i) * y + w.target_icl_b(i);
        }
    }

    const std::size_t heads = cfg.icl_heads;
    const std::size_t dh = cfg.icl_head_dim();
    const std::size_t kv_train = cfg.icl_kv_heads_train;
    if (capture != nullptr) capture->kv.clear();

    auto gather = [&](const TensorT<T>& src, const std::vector<std::size_t>& idx) {
        TensorT<T> out({idx.size(), e});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy(src.data() + idx[i] * e, src.data() + (idx[i] + 1) * e,
                      out.data() + i * e);
        }
        return out;
    };

    for (const IclBlockT<T>& layer : w.icl) {
        const auto h_all = ops::rmsnorm_rows(x, layer.norm_attn);
        const auto x_train = gather(x, train_idx);
        const auto h_kv = ops::rmsnorm_rows(x_train, layer.norm_kv);

        const auto q_all = ops::linear(h_all, layer.wq);  // [R, E]
        auto k_tr = reshape(ops::linear(h_kv, layer.wk), {n, kv_train, dh});
        auto v_tr = reshape(ops::linear(h_kv, layer.wv), {n, kv_train, dh});
        auto k_te = reshape(ops::linear(h_kv, layer.wk_test), {n, 1, dh});
        auto v_te = reshape(ops::linear(h_kv, layer.wv_test), {n, 1, dh});
        if (capture != nullptr) {
            TensorT<T> kv({n, 2, dh});
            for (std::size_t j = 0; j < n; ++j) {
                std::copy(k_te.data() + j * dh, k_te.data() + (j + 1) * dh,
                          kv.data() + (j * 2) * dh);
                std::copy(v_te.data() + j * dh, v_te.data() + (j + 1) * dh,
                          kv.data() + (j * 2 + 1) * dh);
            }
            capture->kv.push_back(std::move(kv));
        }

        const auto q_train = reshape(gather(q_all, train_idx), {n, heads, dh});
        const auto attn_tr = ops::attention(q_train, k_tr, v_tr, ops::SoftmaxMode::qassmax,
                                            &layer.qass, n);
        const auto delta_tr = ops::linear(reshape(TensorT<T>(attn_tr), {n, e}), layer.wo);
        for (std::size_t i = 0; i < n; ++i) {
            kern::add(x.data() + train_idx[i] * e, delta_tr.data() + i * e,
                      x.data() + train_idx[i] * e, e);
        }
        if (m > 0) {
            const auto q_test = reshape(gather(q_all, test_idx), {m, heads, dh});
            const auto attn_te = ops::attention(q_test, k_te, v_te, ops::SoftmaxMode::qassmax,
                                                &layer.qass, n);
            const auto delta_te = ops::linear(reshape(TensorT<T>(attn_te), {m, e}), layer.wo);
            for (std::size_t i = 0; i < m; ++i) {
                kern::add(x.data() + test_idx[i] * e, delta_te.data() + i * e,
                          x.data() + test_idx[i] * e, e);
            }
        }
        ffn_inplace(layer, x);
    }
    return ops::rmsnorm_rows(x, w.icl_norm);
}

template <class T>
TensorT<T> stage3_icl_test_path(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                                const TensorT<T>& test_rows, const IclCaptureT<T>& cache,
                                std::size_t n_train) {
    if (cache.kv.size() != w.icl.size()) throw DimError("cache: layer count mismatch");
    const std::size_t m = test_rows.dim(0);
    const std::size_t e = cfg.icl_emsize();
    const std::size_t heads = cfg.icl_heads;
    const std::size_t dh = cfg.icl_head_dim();

    TensorT<T> x = test_rows;
    for (std::size_t l = 0; l < w.icl.size(); ++l) {
        const IclBlockT<T>& layer = w.icl[l];
        const TensorT<T>& kv = cache.kv[l];
        const std::size_t n = kv.dim(0);
        TensorT<T> k({n, 1, dh}), v({n, 1, dh});
        for (std::size_t j = 0; j < n; ++j) {
            std::copy(kv.data() + (j * 2) * dh, kv.data() + (j * 2 + 1) * dh, k.data() + j * dh);
            std::copy(kv.data() + (j * 2 + 1) * dh, kv.data() + (j * 2 + 2) * dh,
                      v.data() + j * dh);
        }
        const auto h = ops::rmsnorm_rows(x, layer.norm_attn);
        const auto q = reshape(ops::linear(h, layer.wq), {m, heads, dh});
        const auto attn = ops::attention(q, k, v, ops::SoftmaxMode::qassmax, &layer.qass,
                                         n_train);
        const auto delta = ops::linear(reshape(TensorT<T>(attn), {m, e}), layer.wo);
        kern::add(x.data(), delta.data(), x.data(), x.numel());
        ffn_inplace(layer, x);
    }
    return ops::rmsnorm_rows(x, w.icl_norm);
}

template <class T>
TensorT<T> many_class_decode(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                             const TensorT<T>& train_final, const TensorT<T>& y_onehot,
                             const TensorT<T>& test_final) {
    const std::size_t n = train_final.dim(0);
    const std::size_t m = test_final.dim(0);
    const std::size_t c = y_onehot.dim(1);
    if (n == 0) throw DimError("decoder: empty context");
    if (y_onehot.dim(0) != n) throw DimError("decoder: label count mismatch");
    if (c > cfg.c_max) {
        throw UnsupportedError("decoder: class count exceeds the supported ceiling");
    }
    const std::size_t heads = cfg.decoder_heads;
    const std::size_t dh = cfg.decoder_head_dim;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    const T head_weight = T(1) / static_cast<T>(heads);

    const auto q = ops::linear(test_final, w.dec_wq);   // [M, heads*dh]
    const auto k = ops::linear(train_final, w.dec_wk);  // [N, heads*dh]

    // Head-averaged label retrieval, accumulated in double so the result is
    // order-free over the context rows.
    TensorT<T> probs({m, c});
    DTensor logits({n});
    std::vector<double> acc(c);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const T* qv = q.data() + i * heads * dh + h * dh;
            const double scale = static_cast<double>(w.dec_qass.scale({qv, dh})) *
                                 std::log(static_cast<double>(n));
            double max_logit = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                logits(j) = static_cast<double>(
                                kern::dot(qv, k.data() + j * heads * dh + h * dh, dh) *
                                inv_sqrt) *
                            scale;
                max_logit = std::max(max_logit, logits(j));
            }
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                logits(j) = std::exp(logits(j) - max_logit);
                total += logits(j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                const double alpha = logits(j) / total;
                const T* yj = y_onehot.data() + j * c;
                for (std::size_t cc = 0; cc < c; ++cc) {
                    acc[cc] += static_cast<double>(head_weight) * alpha *
                               static_cast<double>(yj[cc]);
                }
            }
        }
        for (std::size_t cc = 0; cc < c; ++cc) probs(i, cc) = static_cast<T>(acc[cc]);
    }
    return probs;
}

template <class T>
TensorT<T> log_clip_probs(const TensorT<T>& probs) {
    TensorT<T> out(probs.shape());
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        out(i) = std::log(std::max(probs(i), T(1e-10)));
    }
    return out;
}

template <class T>
std::vector<BarDistribution> regression_decode(const ModelConfig& cfg,
                                               const ModelWeightsT<T>& w,
                                               const TensorT<T>& test_final,
                                               const std::vector<double>& edges) {
    if (edges.size() != cfg.n_buckets + 1) throw DimError("regression head: edge count mismatch");
    const std::size_t m = test_final.dim(0);
    auto h = ops::linear(test_final, w.head_w1, &w.head_b1);
    for (T& v : h.values()) v = ops::gelu(v);
    const auto logits = ops::linear(h, w.head_w2, &w.head_b2);  // [M, n_buckets]

    std::vector<BarDistribution> bars(m);
    for (std::size_t i = 0; i < m; ++i) {
        bars[i].edges = edges;
        bars[i].logits.assign(logits.data() + i * cfg.n_buckets,
                              logits.data() + (i + 1) * cfg.n_buckets);
    }
    return bars;
}

template <class T>
std::pair<TensorT<T>, std::vector<TensorT<T>>> run_pre_icl(const ModelConfig& cfg,
                                                           const ModelWeightsT<T>& w,
                                                           const DatasetViewT<T>& view,
                                                           std::size_t row_chunk,
                                                           std::size_t col_batch,
                                                           alloc::AllocStats* pre_icl_stats) {
    cfg.validate();
    require_train_first(view);
    const std::size_t r_count = view.n_rows();
    const std::size_t n_train = view.n_train();
    if (n_train == 0) throw ConfigError("pipeline: zero train rows");
    row_chunk = std::clamp<std::size_t>(row_chunk, 1, r_count);

    TensorT<T> row_embeds({r_count, cfg.icl_emsize()});  // outside the measured scope
    alloc::AllocScope scope;

    std::vector<RowRange> train_chunks;
    for (std::size_t r0 = 0; r0 < n_train; r0 += row_chunk) {
        train_chunks.push_back(RowRange{r0, std::min(r0 + row_chunk, n_train)});
    }
    auto inducing = stage1_inducing_states(cfg, w, view, train_chunks, col_batch);
    for (std::size_t r0 = 0; r0 < r_count; r0 += row_chunk) {
        pre_icl_rows(cfg, w, view, RowRange{r0, std::min(r0 + row_chunk, r_count)},
                     std::span<const TensorT<T>>{inducing.data(), inducing.size()}, row_embeds);
    }

    const auto stats = scope.finish();
    if (pre_icl_stats != nullptr) *pre_icl_stats = stats;
    return {std::move(row_embeds), std::move(inducing)};
}

template <class T>
ForwardResultT<T> decode_result(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                                const DatasetViewT<T>& view, TensorT<T> final_embeds) {
    const std::size_t n = view.n_train();
    const std::size_t m = view.n_rows() - n;
    const std::size_t e = cfg.icl_emsize();

    ForwardResultT<T> result;
    TensorT<T> test_final({m, e});
    std::copy(final_embeds.data() + n * e, final_embeds.data() + (n + m) * e, test_final.data());

    if (view.task == prior::Task::classification) {
        const std::size_t c = view.n_classes;
        if (c < 2) throw ConfigError("pipeline: classification needs >= 2 classes");
        if (c > cfg.c_max) throw UnsupportedError("pipeline: class count exceeds the ceiling");
        TensorT<T> train_final({n, e});
        std::copy(final_embeds.data(), final_embeds.data() + n * e, train_final.data());
        TensorT<T> onehot({n, c});
        for (std::size_t i = 0; i < n; ++i) {
            onehot(i, static_cast<std::size_t>(view.y_class[i])) = T(1);
        }
        result.probs = many_class_decode(cfg, w, train_final, onehot, test_final);
    } else {
        std::vector<double> y_train;
        y_train.reserve(n);
        for (std::size_t i = 0; i < n; ++i) y_train.push_back(view.y_target[i]);
        result.bar_edges = bar_edges_from_targets(y_train, cfg.n_buckets);
        result.bars = regression_decode(cfg, w, test_final, result.bar_edges);
    }
    result.final_embeds = std::move(final_embeds);
    return result;
}

template <class T>
ForwardResultT<T> run_pipeline(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                               const DatasetViewT<T>& view, std::size_t row_chunk,
                               std::size_t col_batch, alloc::AllocStats* pre_icl_stats) {
    auto [row_embeds, inducing] = run_pre_icl(cfg, w, view, row_chunk, col_batch, pre_icl_stats);
    auto final_embeds = stage3_icl(cfg, w, row_embeds, view);
    return decode_result(cfg, w, view, std::move(final_embeds));
}

template <class T>
ForwardResultT<T> forward(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                          const DatasetViewT<T>& view) {
    return run_pipeline(cfg, w, view, view.n_rows(), cfg.n_groups(view.n_features()), nullptr);
}

#define TFE_INSTANTIATE_MODEL(T)                                                              \
    template TensorT<T> embed_cells<T>(const ModelConfig&, const ModelWeightsT<T>&,           \
                                       const DatasetViewT<T>&, RowRange, std::size_t,         \
                                       std::size_t);                                          \
    template TensorT<T> embed_cells<T>(const ModelConfig&, const ModelWeightsT<T>&,           \
                                       const DatasetViewT<T>&);                               \
    template std::vector<TensorT<T>> stage1_inducing_states<T>(                               \
        const ModelConfig&, const ModelWeightsT<T>&, const DatasetViewT<T>&,                  \
        std::span<const RowRange>, std::size_t);                                             \
    template TensorT<T> stage1_apply_rows<T>(const ModelConfig&, const ModelWeightsT<T>&,     \
                                             const TensorT<T>&, std::span<const TensorT<T>>); \
    template std::pair<TensorT<T>, std::vector<TensorT<T>>> stage1_distribution_embed<T>(     \
        const ModelConfig&, const ModelWeightsT<T>&, const TensorT<T>&);                      \
    template TensorT<T> stage2_aggregate<T>(const ModelConfig&, const ModelWeightsT<T>&,      \
                                            const TensorT<T>&);                               \
    template void pre_icl_rows<T>(const ModelConfig&, const ModelWeightsT<T>&,                \
                                  const DatasetViewT<T>&, RowRange,                           \
                                  std::span<const TensorT<T>>, TensorT<T>&);                  \
    template TensorT<T> stage3_icl<T>(const ModelConfig&, const ModelWeightsT<T>&,            \
                                      const TensorT<T>&, const DatasetViewT<T>&,              \
                                      IclCaptureT<T>*);                                       \
    template TensorT<T> stage3_icl_test_path<T>(const ModelConfig&, const ModelWeightsT<T>&,  \
                                                const TensorT<T>&, const IclCaptureT<T>&,     \
                                                std::size_t);                                 \
    template TensorT<T> many_class_decode<T>(const ModelConfig&, const ModelWeightsT<T>&,     \
                                             const TensorT<T>&, const TensorT<T>&,            \
                                             const TensorT<T>&);                              \
    template TensorT<T> log_clip_probs<T>(const TensorT<T>&);                                 \
    template std::vector<BarDistribution> regression_decode<T>(                               \
        const ModelConfig&, const ModelWeightsT<T>&, const TensorT<T>&,                       \
        const std::vector<double>&);                                                          \
    template ForwardResultT<T> decode_result<T>(const ModelConfig&, const ModelWeightsT<T>&, \
                                                const DatasetViewT<T>&, TensorT<T>);          \
    template std::pair<TensorT<T>, std::vector<TensorT<T>>> run_pre_icl<T>(                   \
        const ModelConfig&, const ModelWeightsT<T>&, const DatasetViewT<T>&, std::size_t,     \
        std::size_t, alloc::AllocStats*);                                                     \
    template ForwardResultT<T> run_pipeline<T>(const ModelConfig&, const ModelWeightsT<T>&,   \
                                               const DatasetViewT<T>&, std::size_t,           \
                                               std::size_t, alloc::AllocStats*);              \
    template ForwardResultT<T> forward<T>(const ModelConfig&, const ModelWeightsT<T>&,        \
                                          const DatasetViewT<T>&);

TFE_INSTANTIATE_MODEL(float)
TFE_INSTANTIATE_MODEL(double)

#undef TFE_INSTANTIATE_MODEL

}  // namespace tfe::model

#pragma once

// Straight-loop float64 reimplementation of the three-stage forward math,
// reading the same parameter tensors but sharing no code with the library
// stages. Everything is written in terms of the defining formulas.

#include <cmath>
#include <cstddef>
#include <vector>

#include "oracles.hpp"
#include "tfe/model.hpp"
#include "tfe/weights.hpp"

namespace moracle {

using Mat = std::vector<std::vector<double>>;
using Cfg = tfe::model::ModelConfig;
using W = tfe::model::ModelWeightsT<double>;

inline std::vector<double> rms_row(const std::vector<double>& x, const tfe::DTensor& gamma,
                                   double eps = 1e-6) {
    double ms = 0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gamma(i) * x[i] / std::sqrt(ms + eps);
    return out;
}

inline std::vector<double> matvec(const tfe::DTensor& w, const std::vector<double>& x,
                                  const tfe::DTensor* b = nullptr) {
    const std::size_t out_dim = w.dim(0), in = w.dim(1);
    std::vector<double> out(out_dim, 0.0);
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = b != nullptr ? (*b)(o) : 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += w(o, i) * x[i];
        out[o] = acc;
    }
    return out;
}

inline double qass_scale(const tfe::ops::ScaleMlpT<double>& mlp, const std::vector<double>& q) {
    std::vector<double> w1(mlp.w1.values().begin(), mlp.w1.values().end());
    std::vector<double> b1(mlp.b1.values().begin(), mlp.b1.values().end());
    std::vector<double> w2(mlp.w2.values().begin(), mlp.w2.values().end());
    return oracle::scale_mlp(q, w1, b1, w2, mlp.b2(0));
}

template <class Block>
inline void ffn_rows(const Block& b, Mat& x) {
    for (auto& row : x) {
        const auto h = rms_row(row, b.norm_ffn);
        auto a = matvec(b.ffn_w1, h, &b.ffn_b1);
        for (double& v : a) v = oracle::gelu(v);
        const auto o = matvec(b.ffn_w2, a, &b.ffn_b2);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += o[i];
    }
}

// Pre-norm cross-attention + feed-forward. n_ctx == 0 selects plain softmax.
inline void mab(const tfe::model::BlockWeightsT<double>& b, Mat& xq, const Mat& kv,
                std::size_t heads, std::size_t n_ctx) {
    const std::size_t d = xq[0].size(), n = kv.size(), dh = d / heads;
    Mat q, k, v;
    for (const auto& row : xq) q.push_back(matvec(b.wq, rms_row(row, b.norm_attn)));
    for (const auto& row : kv) {
        const auto h = rms_row(row, b.norm_kv);
        k.push_back(matvec(b.wk, h));
        v.push_back(matvec(b.wv, h));
    }
    for (std::size_t i = 0; i < xq.size(); ++i) {
        std::vector<double> attn(d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> qh(q[i].begin() + static_cast<std::ptrdiff_t>(h * dh),
                                   q[i].begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));
            std::vector<double> logits(n);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0;
                for (std::size_t t = 0; t < dh; ++t) acc += qh[t] * k[j][h * dh + t];
                logits[j] = acc / std::sqrt(static_cast<double>(dh));
            }
            if (n_ctx > 0) {
                const double s = qass_scale(b.qass, qh) * std::log(static_cast<double>(n_ctx));
                for (double& l : logits) l *= s;
            }
            const auto alpha = oracle::softmax(logits);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t t = 0; t < dh; ++t) attn[h * dh + t] += alpha[j] * v[j][h * dh + t];
            }
        }
        const auto delta = matvec(b.wo, attn);
        for (std::size_t t = 0; t < d; ++t) xq[i][t] += delta[t];
    }
    ffn_rows(b, xq);
}

// Stage 1 over an [R, G, D] grouped tensor: per-block inducing summary plus
// the row path. Returns (cells, states[block][group] as Mat).
struct Stage1Out {
    Mat cells_flat;                        // [R*G][D]
    std::vector<std::vector<Mat>> states;  // [block][group][K][D]
};

inline Stage1Out stage1(const Cfg& cfg, const W& w, const tfe::DTensor& grouped) {
    const std::size_t r_count = grouped.dim(0), n_groups = grouped.dim(1), d = grouped.dim(2);
    Mat x(r_count * n_groups);
    for (std::size_t r = 0; r < r_count; ++r) {
        for (std::size_t g = 0; g < n_groups; ++g) {
            x[r * n_groups + g].assign(grouped.row(r, g).begin(), grouped.row(r, g).end());
        }
    }
    Stage1Out out;
    out.states.resize(cfg.dist_blocks);
    for (std::size_t b = 0; b < cfg.dist_blocks; ++b) {
        const auto& block = w.stage1[b];
        out.states[b].resize(n_groups);
        for (std::size_t g = 0; g < n_groups; ++g) {
            Mat inducing;
            for (std::size_t kq = 0; kq < cfg.n_inducing; ++kq) {
                inducing.push_back({block.inducing_init.row(kq).begin(),
                                    block.inducing_init.row(kq).end()});
            }
            Mat rows_g;
            for (std::size_t r = 0; r < r_count; ++r) rows_g.push_back(x[r * n_groups + g]);
            mab(block.ind, inducing, rows_g, cfg.dist_heads, r_count);
            out.states[b][g] = inducing;
            // Rows attend back to the freshly computed inducing states.
            for (std::size_t r = 0; r < r_count; ++r) {
                Mat one{x[r * n_groups + g]};
                mab(block.row, one, inducing, cfg.dist_heads, cfg.n_inducing);
                x[r * n_groups + g] = one[0];
            }
        }
    }
    out.cells_flat = std::move(x);
    return out;
}

inline std::vector<double> rope_head(const std::vector<double>& v, double pos, double base) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size() / 2; ++i) {
        const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) /
                                                      static_cast<double>(v.size()));
        out[2 * i] = std::cos(theta) * v[2 * i] - std::sin(theta) * v[2 * i + 1];
        out[2 * i + 1] = std::sin(theta) * v[2 * i] + std::cos(theta) * v[2 * i + 1];
    }
    return out;
}

// Stage 2 for a single row's group embeddings [G][D] -> [n_cls * D].
inline std::vector<double> stage2_row(const Cfg& cfg, const W& w, const Mat& groups) {
    const std::size_t d = cfg.embed_dim, n_cls = cfg.n_cls_tokens;
    const std::size_t seq = n_cls + groups.size();
    const std::size_t heads = cfg.agg_heads, dh = d / heads;
    Mat tokens;
    std::vector<double> pos;
    for (std::size_t t = 0; t < n_cls; ++t) {
        tokens.push_back({w.cls_tokens.row(t).begin(), w.cls_tokens.row(t).end()});
        pos.push_back(0.0);
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        tokens.push_back(groups[g]);
        pos.push_back(static_cast<double>(g + 1));
    }

    for (const auto& block : w.stage2) {
        Mat q, k, v;
        for (std::size_t t = 0; t < seq; ++t) {
            q.push_back(matvec(block.wq, rms_row(tokens[t], block.norm_attn)));
            const auto hk = rms_row(tokens[t], block.norm_kv);
            k.push_back(matvec(block.wk, hk));
            v.push_back(matvec(block.wv, hk));
        }
        for (std::size_t t = 0; t < seq; ++t) {
            for (std::size_t h = 0; h < heads; ++h) {
                std::vector<double> qh(q[t].begin() + static_cast<std::ptrdiff_t>(h * dh),
                                       q[t].begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));
                const auto rq = rope_head(qh, pos[t], cfg.rope_base);
                std::copy(rq.begin(), rq.end(), q[t].begin() + static_cast<std::ptrdiff_t>(h * dh));
                std::vector<double> kh(k[t].begin() + static_cast<std::ptrdiff_t>(h * dh),
                                       k[t].begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));
                const auto rk = rope_head(kh, pos[t], cfg.rope_base);
                std::copy(rk.begin(), rk.end(), k[t].begin() + static_cast<std::ptrdiff_t>(h * dh));
            }
        }
        Mat attn(seq, std::vector<double>(d, 0.0));
        for (std::size_t tq = 0; tq < seq; ++tq) {
            for (std::size_t h = 0; h < heads; ++h) {
                std::vector<double> logits(seq);
                for (std::size_t tk = 0; tk < seq; ++tk) {
                    double acc = 0;
                    for (std::size_t t = 0; t < dh; ++t) {
                        acc += q[tq][h * dh + t] * k[tk][h * dh + t];
                    }
                    logits[tk] = acc / std::sqrt(static_cast<double>(dh));
                }
                const auto alpha = oracle::softmax(logits);
                for (std::size_t tk = 0; tk < seq; ++tk) {
                    for (std::size_t t = 0; t < dh; ++t) {
                        attn[tq][h * dh + t] += alpha[tk] * v[tk][h * dh + t];
                    }
                }
            }
        }
        for (std::size_t t = 0; t < seq; ++t) {
            const auto delta = matvec(block.wo, attn[t]);
            for (std::size_t i = 0; i < d; ++i) tokens[t][i] += delta[i];
        }
        ffn_rows(block, tokens);
    }

    std::vector<double> out;
    for (std::size_t t = 0; t < n_cls; ++t) {
        const auto h = rms_row(tokens[t], w.stage2_norm);
        out.insert(out.end(), h.begin(), h.end());
    }
    return out;
}

// Stage 3 over row embeddings [R][E]; train rows are flagged.
inline Mat stage3(const Cfg& cfg, const W& w, Mat x, const std::vector<std::uint8_t>& train,
                  const std::vector<std::int32_t>& y_class, const std::vector<double>& y_target,
                  bool classification) {
    const std::size_t e = cfg.icl_emsize();
    const std::size_t heads = cfg.icl_heads, dh = cfg.icl_head_dim();
    const std::size_t kv_heads = cfg.icl_kv_heads_train;
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t r = 0; r < x.size(); ++r) {
        (train[r] != 0 ? train_idx : test_idx).push_back(r);
    }
    const std::size_t n = train_idx.size();

    for (std::size_t r : train_idx) {
        if (classification) {
            const auto cls = static_cast<std::size_t>(y_class[r]);
            for (std::size_t i = 0; i < e; ++i) x[r][i] += w.e_icl(cls, i);
        } else {
            for (std::size_t i = 0; i < e; ++i) {
                x[r][i] += w.target_icl_w(i) * y_target[r] + w.target_icl_b(i);
            }
        }
    }

    for (const auto& layer : w.icl) {
        Mat k_tr, v_tr, k_te, v_te;
        for (std::size_t j : train_idx) {
            const auto hk = rms_row(x[j], layer.norm_kv);
            k_tr.push_back(matvec(layer.wk, hk));
            v_tr.push_back(matvec(layer.wv, hk));
            k_te.push_back(matvec(layer.wk_test, hk));
            v_te.push_back(matvec(layer.wv_test, hk));
        }
        Mat deltas(x.size());
        for (std::size_t r = 0; r < x.size(); ++r) {
            const auto q = matvec(layer.wq, rms_row(x[r], layer.norm_attn));
            std::vector<double> attn(e, 0.0);
            const bool is_train = train[r] != 0;
            for (std::size_t h = 0; h < heads; ++h) {
                std::vector<double> qh(q.begin() + static_cast<std::ptrdiff_t>(h * dh),
                                       q.begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));
                const double s = qass_scale(layer.qass, qh) * std::log(static_cast<double>(n));
                std::vector<double> logits(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0;
                    if (is_train) {
                        const std::size_t kvh = (kv_heads == 1) ? 0 : h;
                        for (std::size_t t = 0; t < dh; ++t) acc += qh[t] * k_tr[j][kvh * dh + t];
                    } else {
                        for (std::size_t t = 0; t < dh; ++t) acc += qh[t] * k_te[j][t];
                    }
                    logits[j] = acc / std::sqrt(static_cast<double>(dh)) * s;
                }
                const auto alpha = oracle::softmax(logits);
                for (std::size_t j = 0; j < n; ++j) {
                    if (is_train) {
                        const std::size_t kvh = (kv_heads == 1) ? 0 : h;
                        for (std::size_t t = 0; t < dh; ++t) {
                            attn[h * dh + t] += alpha[j] * v_tr[j][kvh * dh + t];
                        }
                    } else {
                        for (std::size_t t = 0; t < dh; ++t) {
                            attn[h * dh + t] += alpha[j] * v_te[j][t];
                        }
                    }
                }
            }
            deltas[r] = matvec(layer.wo, attn);
        }
        for (std::size_t r = 0; r < x.size(); ++r) {
            for (std::size_t i = 0; i < e; ++i) x[r][i] += deltas[r][i];
        }
        ffn_rows(layer, x);
    }
    for (auto& row : x) row = rms_row(row, w.icl_norm);
    return x;
}

// Retrieval decoder: head-averaged attention-weighted one-hot labels.
inline Mat decode(const Cfg& cfg, const W& w, const Mat& train_final, const Mat& onehot,
                  const Mat& test_final) {
    const std::size_t heads = cfg.decoder_heads, dh = cfg.decoder_head_dim;
    const std::size_t n = train_final.size(), c = onehot[0].size();
    Mat probs(test_final.size(), std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < test_final.size(); ++i) {
        const auto q = matvec(w.dec_wq, test_final[i]);
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> qh(q.begin() + static_cast<std::ptrdiff_t>(h * dh),
                                   q.begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));
            const double s = qass_scale(w.dec_qass, qh) * std::log(static_cast<double>(n));
            std::vector<double> logits(n);
            for (std::size_t j = 0; j < n; ++j) {
                const auto k = matvec(w.dec_wk, train_final[j]);
                double acc = 0;
                for (std::size_t t = 0; t < dh; ++t) acc += qh[t] * k[h * dh + t];
                logits[j] = acc / std::sqrt(static_cast<double>(dh)) * s;
            }
            const auto alpha = oracle::softmax(logits);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t cc = 0; cc < c; ++cc) {
                    probs[i][cc] += alpha[j] * onehot[j][cc] / static_cast<double>(heads);
                }
            }
        }
    }
    return probs;
}

}  // namespace moracle
